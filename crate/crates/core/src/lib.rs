pub mod chunker;
pub mod evaluation;
pub mod extraction;
pub mod hashing;
pub mod media;
pub mod memory;
pub mod progression;
pub mod prompts;
pub mod provider;
pub mod repair;
pub mod storyline;
