//! Browser demo. Each export returns a flat `Float64Array`; the page in
//! `www/` knows the record layout of each.

use msan::autodiff::Tensor;
use msan::cluster::{kmeans_refine, select_top_fraction, source_centroids};
use msan::pca::Pca;
use msan::signal::{extract_features, BandSpec, ElectrodeLayout};
use msan::synth::{generate_benchmark, generate_raw_eeg_named, SynthConfig};
use msan::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

const DEMO_RATE_HZ: f64 = 200.0;

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Mean DE over a 4 s toy recording of `class_id`, one band, as a
/// row-major `[17 × 19]` grid. Unmapped cells are zero.
pub fn de_map(class_id: usize, band: usize, seed: u64) -> Result<Vec<f64>> {
    let layout = ElectrodeLayout::seed62();
    let rec = generate_raw_eeg_named(layout.channel_names(), DEMO_RATE_HZ, 4.0, class_id, seed)?;
    let bands = BandSpec::standard();
    let band = band.min(bands.len() - 1);
    let maps = extract_features(&rec, &bands[band..=band], &layout, 1.0, 1.0)?;
    let mut mean = vec![0.0; layout.grid_h() * layout.grid_w()];
    for m in &maps {
        mean.iter_mut().zip(m.values.data()).for_each(|(a, v)| *a += v / maps.len() as f64);
    }
    Ok(mean)
}

/// PCA of four synthetic subjects at the given shift. Records are
/// `[pc1, pc2, subject, class]`.
pub fn shift_scatter(shift: f64, seed: u64) -> Result<Vec<f64>> {
    let cfg =
        SynthConfig { num_subjects: 4, samples_per_class: 40, subject_shift: shift, seed, ..SynthConfig::default() };
    let subjects = generate_benchmark(&cfg)?;
    let rows: Vec<Vec<f64>> = subjects
        .iter()
        .flat_map(|s| {
            let f = s.flat_features();
            (0..f.rows()).map(move |i| f.row(i).to_vec()).collect::<Vec<_>>()
        })
        .collect();
    let x = Tensor::from_rows(&rows)?;
    let y = Pca::fit(&x, 2)?.project(&x)?;
    let mut out = Vec::with_capacity(rows.len() * 4);
    let mut i = 0;
    for s in &subjects {
        for &label in &s.labels {
            out.extend_from_slice(&[y.row(i)[0], y.row(i)[1], s.subject_id as f64, label as f64]);
            i += 1;
        }
    }
    Ok(out)
}

/// Pseudo-labeling on a 2-D toy: labeled source blobs seed K-means over
/// a displaced, unlabeled target. Records are `[x, y, kind, cluster,
/// selected, true_class]` where kind is 0 for source, 1 for target and 2
/// for a final cluster center.
pub fn pseudo_label_demo(q: f64, offset: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [(-2.0, 0.0), (2.0, 0.0), (0.0, 3.0)];
    let noise = Normal::new(0.0, 0.8).expect("positive sigma");
    let angle: f64 = rng.random_range(-0.4..0.4);
    let (c, s) = (angle.cos(), angle.sin());
    let blob = |rng: &mut ChaCha8Rng, moved: bool| -> Vec<(Vec<f64>, usize)> {
        let mut v = Vec::new();
        for (k, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..60 {
                let (x, y): (f64, f64) = (cx + noise.sample(rng), cy + noise.sample(rng));
                let p = if moved { vec![c * x - s * y + offset, s * x + c * y + 0.5 * offset] } else { vec![x, y] };
                v.push((p, k));
            }
        }
        v
    };
    let source = blob(&mut rng, false);
    let target = blob(&mut rng, true);
    let src = Tensor::from_rows(&source.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>())?;
    let tgt = Tensor::from_rows(&target.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>())?;
    let labels: Vec<usize> = source.iter().map(|(_, k)| *k).collect();
    let state = kmeans_refine(&source_centroids(&src, &labels, 3)?, &tgt, 100, 1e-6)?;
    let picked = select_top_fraction(&state, q)?;
    let mut selected = vec![false; target.len()];
    picked.entries.iter().for_each(|e| selected[e.target_index] = true);

    let mut out = Vec::new();
    for (p, k) in &source {
        out.extend_from_slice(&[p[0], p[1], 0.0, *k as f64, 0.0, *k as f64]);
    }
    for (i, (p, k)) in target.iter().enumerate() {
        out.extend_from_slice(&[
            p[0],
            p[1],
            1.0,
            state.assignments[i] as f64,
            f64::from(u8::from(selected[i])),
            *k as f64,
        ]);
    }
    for k in 0..3 {
        let r = state.centers.row(k);
        out.extend_from_slice(&[r[0], r[1], 2.0, k as f64, 0.0, k as f64]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = deMap)]
pub fn de_map_js(class_id: usize, band: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    js(de_map(class_id, band, seed))
}

#[wasm_bindgen(js_name = shiftScatter)]
pub fn shift_scatter_js(shift: f64, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    js(shift_scatter(shift, seed))
}

#[wasm_bindgen(js_name = pseudoLabels)]
pub fn pseudo_label_js(q: f64, offset: f64, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    js(pseudo_label_demo(q, offset, seed))
}

#[wasm_bindgen(js_name = gridDims)]
pub fn grid_dims() -> Vec<u32> {
    let l = ElectrodeLayout::seed62();
    vec![l.grid_h() as u32, l.grid_w() as u32]
}
