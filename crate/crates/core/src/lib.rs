//! Deterministic highway-merge and roundabout traffic simulation driven by
//! LLM-empowered agents.
//!
//! The crate is organized around a small simulation kernel ([`sim`]) that
//! steps vehicles along a lane-based road network ([`road`]), scenario
//! builders that spawn reproducible traffic ([`scenario`]), and an agent
//! pipeline that turns world state into text ([`perception`]), estimates the
//! intentions of surrounding vehicles ([`interaction`]), reasons through a
//! goal/plan/action chain ([`planning`], [`agent`]), and learns across
//! episodes through a shared experience store ([`memory`]) updated by
//! ranking-based reflection ([`reflection`]).
//!
//! Everything is deterministic given a seed and a deterministic language
//! backend: the same configuration always produces byte-identical episode
//! logs. [`llm`] provides the backend abstraction plus a scripted
//! implementation for tests, [`harness`] runs whole episodes and
//! train/test batches, and [`render`] replays logs into SVG frames.

pub mod agent;
pub mod config;
pub mod harness;
pub mod interaction;
pub mod jsonx;
pub mod llm;
pub mod memory;
pub mod perception;
pub mod planning;
pub mod prompts;
pub mod reflection;
pub mod render;
pub mod road;
pub mod scenario;
pub mod sim;
pub mod wire;
