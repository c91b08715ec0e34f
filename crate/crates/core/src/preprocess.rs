//! Feature-space preparation: PCA reduction, temporal max-pooling, mean representatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{DgmError, Result};
use crate::model::{validate_bundle, CameraGraph, DgmConfig, FrameFeature, Tracklet};

/// A fitted linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `d_raw x d_out`, orthonormal columns, descending explained variance.
    basis: DMatrix<f64>,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Sample variance along each retained direction.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, frame: &FrameFeature) -> Result<FrameFeature> {
        pca_apply(self, frame)
    }

    pub fn apply_tracklet(&self, t: &Tracklet) -> Result<Tracklet> {
        let frames = t
            .frames()
            .iter()
            .map(|f| self.apply(f))
            .collect::<Result<Vec<_>>>()?;
        Tracklet::new(t.person_id(), frames)
    }

    pub fn apply_graph(&self, g: &CameraGraph) -> Result<CameraGraph> {
        let tracklets = g
            .tracklets()
            .iter()
            .map(|t| self.apply_tracklet(t))
            .collect::<Result<Vec<_>>>()?;
        CameraGraph::new(tracklets)
    }
}

/// Fits PCA to the rows of `frames` (`N x d_raw`), keeping `d_out` components.
///
/// Each basis column is sign-normalised so that its largest-magnitude entry is positive.
pub fn pca_fit(frames: &DMatrix<f64>, d_out: usize) -> Result<PcaModel> {
    let (n, d_raw) = frames.shape();
    if n < 2 {
        return Err(DgmError::TooFewSamples {
            required: 2,
            found: n,
        });
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(DgmError::NonFinite("pca input"));
    }
    if d_out == 0 || d_out > n.min(d_raw) {
        return Err(DgmError::RankDeficient {
            rank: n.min(d_raw),
            requested: d_out,
        });
    }

    let mean = frames.row_mean().transpose();
    let mut centered = frames.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or(DgmError::EigenFailure)?;
    let singular = svd.singular_values;
    if singular.iter().any(|s| !s.is_finite()) {
        return Err(DgmError::EigenFailure);
    }

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));

    let s_max = singular[order[0]];
    let tol = (n.max(d_raw) as f64) * f64::EPSILON * s_max;
    let rank = singular.iter().filter(|&&s| s > tol).count();
    if rank < d_out {
        return Err(DgmError::RankDeficient {
            rank,
            requested: d_out,
        });
    }

    let mut basis = DMatrix::zeros(d_raw, d_out);
    let mut explained_variance = Vec::with_capacity(d_out);
    for (col, &idx) in order.iter().take(d_out).enumerate() {
        let mut v: DVector<f64> = v_t.row(idx).transpose();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
        explained_variance.push(singular[idx] * singular[idx] / (n - 1) as f64);
    }

    Ok(PcaModel {
        mean,
        basis,
        explained_variance,
    })
}

/// Projects a frame: `basis^T (frame - mean)`.
pub fn pca_apply(model: &PcaModel, frame: &FrameFeature) -> Result<FrameFeature> {
    if frame.len() != model.input_dim() {
        return Err(DgmError::DimensionMismatch {
            expected: model.input_dim(),
            found: frame.len(),
        });
    }
    Ok(model.basis.tr_mul(&(frame - &model.mean)))
}

/// Element-wise maximum over consecutive windows of `window` frames.
/// A trailing partial window is pooled as-is.
pub fn max_pool(tracklet: &Tracklet, window: usize) -> Result<Tracklet> {
    if window == 0 {
        return Err(DgmError::ConfigInvalid("pool window must be at least 1".into()));
    }
    let frames = tracklet
        .frames()
        .chunks(window)
        .map(|chunk| {
            let mut pooled = chunk[0].clone();
            for f in &chunk[1..] {
                pooled.zip_apply(f, |p, v| *p = p.max(v));
            }
            pooled
        })
        .collect();
    Tracklet::new(tracklet.person_id(), frames)
}

pub fn mean_representative(tracklet: &Tracklet) -> DVector<f64> {
    tracklet.mean()
}

/// Stacks every frame of both cameras into one `N x d` matrix.
pub fn stack_frames(graphs: &[&CameraGraph]) -> DMatrix<f64> {
    let rows: Vec<&FrameFeature> = graphs
        .iter()
        .flat_map(|g| g.tracklets())
        .flat_map(|t| t.frames())
        .collect();
    let dim = rows.first().map_or(0, |f| f.len());
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

/// Applies the configured preprocessing to a camera pair: a PCA fit on the
/// union of both cameras (skipped when the input is already at or below
/// `pca_dim`), then max-pooling.
pub fn prepare_bundle(
    a: &CameraGraph,
    b: &CameraGraph,
    config: &DgmConfig,
) -> Result<(CameraGraph, CameraGraph)> {
    let dim = validate_bundle(a, b)?;
    let (a, b) = if dim > config.pca_dim {
        let model = pca_fit(&stack_frames(&[a, b]), config.pca_dim)?;
        (model.apply_graph(a)?, model.apply_graph(b)?)
    } else {
        (a.clone(), b.clone())
    };
    Ok((
        pool_graph(&a, config.pool_window)?,
        pool_graph(&b, config.pool_window)?,
    ))
}

pub fn pool_graph(g: &CameraGraph, window: usize) -> Result<CameraGraph> {
    let tracklets = g
        .tracklets()
        .iter()
        .map(|t| max_pool(t, window))
        .collect::<Result<Vec<_>>>()?;
    CameraGraph::new(tracklets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tracklet(rows: &[&[f64]]) -> Tracklet {
        Tracklet::new(
            Some(3),
            rows.iter().map(|r| DVector::from_column_slice(r)).collect(),
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn subspace_data_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let embed = random_matrix(&mut rng, 2, 10);
        let coeffs = random_matrix(&mut rng, 100, 2);
        let offset = DVector::from_fn(10, |i, _| i as f64);
        let mut data = coeffs * embed;
        for mut row in data.row_iter_mut() {
            row += offset.transpose();
        }
        let model = pca_fit(&data, 2).unwrap();
        for row in data.row_iter() {
            let x = row.transpose();
            let z = model.apply(&x).unwrap();
            let recon = model.basis() * z + model.mean();
            assert!((recon - &x).amax() <= 1e-8);
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_matrix(&mut rng, 30, 6);
        let model = pca_fit(&data, 6).unwrap();
        let proj: Vec<_> = data
            .row_iter()
            .map(|r| model.apply(&r.transpose()).unwrap())
            .collect();
        for i in 0..30 {
            for j in 0..30 {
                let raw = (data.row(i) - data.row(j)).norm();
                let red = (&proj[i] - &proj[j]).norm();
                assert!((raw - red).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn basis_matches_covariance_eigendecomposition() {
        let data = DMatrix::from_row_slice(
            5,
            3,
            &[
                2.0, 0.5, -1.0, //
                -1.0, 1.5, 0.0, //
                0.5, -2.0, 1.0, //
                3.0, 1.0, 2.0, //
                -0.5, 0.0, -2.5,
            ],
        );
        let model = pca_fit(&data, 3).unwrap();

        // Oracle: eigenvectors of the sample covariance, sign-normalised the same way.
        let mean = data.row_mean();
        let mut centered = data.clone();
        for mut r in centered.row_iter_mut() {
            r -= &mean;
        }
        let cov = centered.transpose() * &centered / 4.0;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (col, &idx) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            assert!((model.basis().column(col) - &v).amax() <= 1e-10);
            assert!((model.explained_variance()[col] - eig.eigenvalues[idx]).abs() <= 1e-10);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_matrix(&mut rng, 40, 12);
        let model = pca_fit(&data, 5).unwrap();
        let gram = model.basis().transpose() * model.basis();
        assert!((gram - DMatrix::identity(5, 5)).amax() <= 1e-8);
        let ev = model.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn apply_centering_and_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_matrix(&mut rng, 20, 4);
        let model = pca_fit(&data, 3).unwrap();
        let z = model.apply(model.mean()).unwrap();
        assert!(z.amax() == 0.0);
        let e1 = model.mean() + model.basis().column(0);
        let z = model.apply(&e1).unwrap();
        assert!((z[0] - 1.0).abs() <= 1e-12 && z[1].abs() <= 1e-12 && z[2].abs() <= 1e-12);
        for _ in 0..50 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let z = model.apply(&x).unwrap();
            assert!(z.norm() <= (&x - model.mean()).norm() + 1e-10);
        }
        assert!(matches!(
            model.apply(&DVector::zeros(3)),
            Err(DgmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pca_error_paths() {
        let one = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(pca_fit(&one, 1), Err(DgmError::TooFewSamples { .. })));
        // Three points on a line only carry one direction.
        let line = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(matches!(
            pca_fit(&line, 2),
            Err(DgmError::RankDeficient { rank: 1, .. })
        ));
        assert!(pca_fit(&line, 1).is_ok());
    }

    #[test]
    fn pooling_examples() {
        let t = tracklet(&[&[1.0, 5.0], &[3.0, 2.0]]);
        let pooled = max_pool(&t, 2).unwrap();
        assert_eq!(pooled.frames(), &[DVector::from_column_slice(&[3.0, 5.0])]);
        assert_eq!(pooled.person_id(), Some(3));
        assert_eq!(max_pool(&t, 1).unwrap(), t);

        let rows: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let long = tracklet(&refs);
        let pooled = max_pool(&long, 10).unwrap();
        let maxima: Vec<f64> = pooled.frames().iter().map(|f| f[0]).collect();
        assert_eq!(maxima, vec![9.0, 19.0, 24.0]);
        assert!(max_pool(&t, 0).is_err());
    }

    #[test]
    fn pooling_is_idempotent_for_large_windows() {
        let t = tracklet(&[&[1.0, -5.0], &[3.0, 2.0], &[0.0, 7.0]]);
        for w in 3..6 {
            let once = max_pool(&t, w).unwrap();
            assert_eq!(max_pool(&once, w).unwrap(), once);
        }
    }

    #[test]
    fn mean_examples() {
        let t = tracklet(&[&[0.0, 0.0], &[2.0, 2.0]]);
        assert_eq!(mean_representative(&t), DVector::from_column_slice(&[1.0, 1.0]));
        let single = tracklet(&[&[4.0, -1.0]]);
        assert_eq!(mean_representative(&single), DVector::from_column_slice(&[4.0, -1.0]));
        let constant = tracklet(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        assert!((mean_representative(&constant) - DVector::from_column_slice(&[0.3, 0.7])).amax() < 1e-15);
    }

    #[test]
    fn prepare_skips_pca_below_target() {
        let a = CameraGraph::new(vec![tracklet(&[&[1.0, 5.0], &[3.0, 2.0]])]).unwrap();
        let b = CameraGraph::new(vec![tracklet(&[&[0.0, 1.0]])]).unwrap();
        let cfg = DgmConfig { pool_window: 2, ..DgmConfig::default() };
        let (pa, pb) = prepare_bundle(&a, &b, &cfg).unwrap();
        assert_eq!(pa.tracklets()[0].len(), 1);
        assert_eq!(pa.dim(), Some(2));
        assert_eq!(pb.tracklets()[0].len(), 1);
    }

    #[test]
    fn prepare_reduces_wide_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng| {
            let frames = (0..6)
                .map(|_| DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            Tracklet::new(None, frames).unwrap()
        };
        let a = CameraGraph::new((0..3).map(|_| mk(&mut rng)).collect()).unwrap();
        let b = CameraGraph::new((0..3).map(|_| mk(&mut rng)).collect()).unwrap();
        let cfg = DgmConfig { pca_dim: 4, pool_window: 3, ..DgmConfig::default() };
        let (pa, pb) = prepare_bundle(&a, &b, &cfg).unwrap();
        assert_eq!(pa.dim(), Some(4));
        assert_eq!(pb.dim(), Some(4));
        assert_eq!(pa.tracklets()[0].len(), 2);
    }
}
