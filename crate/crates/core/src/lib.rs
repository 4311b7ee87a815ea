//! Skill-targeted training-data curation.
//!
//! The pipeline turns a question corpus and a student model's scored
//! response traces into a targeted SFT dataset in three stages: reward
//! filtering flags difficult questions, a teacher LLM diagnoses the skills
//! missing from the student's responses, and the resulting profile drives
//! either selection of existing training questions or synthesis of new
//! ones. Baseline constructions and ablation tooling live alongside.

pub mod backends;
pub mod corpus;
pub mod curation_select;
pub mod curation_synth;
pub mod pipeline;
pub mod reward_filter;
pub mod skill_profile;
