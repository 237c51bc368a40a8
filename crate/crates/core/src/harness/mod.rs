//! File formats and the glue behind the command-line tool.

pub mod config;
pub mod dataset;
pub mod format;

use std::path::Path;

pub use config::RunConfig;
pub use dataset::{read_dataset, write_atomic, write_dataset, Manifest};
pub use format::{decode_tensor, encode_tensor, Checkpoint};

use crate::error::{Error, Result};
use crate::nets::ModelBundle;
use crate::pca::{self, Pca};
use crate::synth::SubjectData;
use crate::trainer::stack_rows;

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &ck.encode())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&dataset::read_bytes(path)?)
}

/// Projects `G_f` features of every sample onto the top two principal
/// components of the pooled features. Samples of `target_id` get domain 1,
/// all others domain 0.
pub fn export_embeddings(bundle: &ModelBundle, subjects: &[SubjectData], target_id: usize) -> Result<String> {
    if !subjects.iter().any(|s| s.subject_id == target_id) {
        return Err(Error::Data(format!("subject {target_id} is not in the dataset")));
    }
    let flats: Vec<_> = subjects.iter().map(|s| s.flat_features()).collect();
    let width = flats.first().map_or(0, |f| f.cols());
    if width != bundle.input_width() {
        return Err(Error::config(
            "feature_dims",
            format!("checkpoint expects input width {}, dataset has {width}", bundle.input_width()),
        ));
    }
    let all = stack_rows(&flats.iter().collect::<Vec<_>>())?;
    let f = bundle.features(&all)?;
    let coords = Pca::fit(&f, 2.min(f.cols()))?.project(&f)?;
    let coords = if coords.cols() == 2 {
        coords
    } else {
        let data = (0..coords.rows()).flat_map(|i| [coords.row(i)[0], 0.0]).collect();
        crate::autodiff::Tensor::new(vec![coords.rows(), 2], data)?
    };
    let domains: Vec<usize> =
        subjects.iter().flat_map(|s| std::iter::repeat_n(usize::from(s.subject_id == target_id), s.len())).collect();
    let labels: Vec<usize> = subjects.iter().flat_map(|s| s.labels.iter().copied()).collect();
    pca::embeddings_csv(&domains, &labels, &coords)
}
