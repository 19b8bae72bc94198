//! Core of the materials contribution service: the MPFile format, material
//! identifiers, the contribution pipeline, plot building, references and
//! the on-disk record store.

pub mod builder;
pub mod identifier;
pub mod mpfile;
pub mod pipeline;
pub mod refs;
pub mod store;
pub mod submission;

pub use builder::{DerivedMaterialDoc, PlotDocument, PlotSpec};
pub use identifier::MaterialId;
pub use mpfile::{DataTable, MpFileDoc, Section};
pub use pipeline::{Cid, Contribution, HierData, HierValue, Visibility};
pub use store::Store;
