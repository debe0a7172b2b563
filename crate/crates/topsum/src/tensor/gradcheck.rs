//! Central-difference verification of the reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, zero_grads, Tensor, TensorError};

/// Knobs for [`check_gradients`].
///
/// `eps` is the half-width of the central difference. `max_coords` caps how
/// many parameter coordinates get probed; when the model has more, a seeded
/// subsample is drawn so the check stays fast but reproducible.
///
/// The default `eps` of 1e-3 is deliberately large: the difference quotient
/// carries roundoff of about `ulp(loss) / (2 eps)`, and coordinates whose
/// true gradient sits near the 1e-8 relative-error floor need that noise
/// pushed below 1e-12. At `eps` 1e-5 the noise alone reads as a few 1e-3 of
/// relative error on such coordinates; at 1e-3 it lands near 1e-5 while
/// truncation stays invisible for these smooth, small-valued networks.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub eps: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-3,
            max_coords: 100,
            seed: 0x9d2c_5680,
        }
    }
}

/// Compares the taped gradient of `loss` against central differences
/// `(f(x+eps) - f(x-eps)) / 2 eps` and returns the worst relative error,
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss` must rebuild the graph from `params` on every call; it is invoked
/// once taped for the analytic pass and twice per probed coordinate untaped.
/// A non-finite loss at any evaluation is an error, as is an empty parameter
/// list.
pub fn check_gradients<F>(
    mut loss: F,
    params: &[Tensor],
    cfg: &GradCheck,
) -> Result<f64, TensorError>
where
    F: FnMut() -> Result<Tensor, TensorError>,
{
    if params.is_empty() {
        return Err(TensorError::Empty {
            op: "check_gradients",
        });
    }
    zero_grads(params);
    let root = loss()?;
    let base = root.item()?;
    if !base.is_finite() {
        return Err(TensorError::NonFinite { what: "loss" });
    }
    root.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ci| (pi, ci)))
        .collect();
    if total > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        coords.shuffle(&mut rng);
        coords.truncate(cfg.max_coords);
    }

    let mut worst: f64 = 0.0;
    for (pi, ci) in coords {
        let p = &params[pi];
        let orig = p.get(ci)?;
        p.update_values(|v| v[ci] = orig + cfg.eps);
        let f_plus = no_grad(&mut loss)?.item()?;
        p.update_values(|v| v[ci] = orig - cfg.eps);
        let f_minus = no_grad(&mut loss)?.item()?;
        p.update_values(|v| v[ci] = orig);
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(TensorError::NonFinite { what: "probed loss" });
        }
        let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
        let a = analytic[pi][ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_roundoff() {
        // f = sum(x^2): df/dx = 2x
        let x = Tensor::param(&[3], vec![0.5, -1.2, 2.0]).unwrap();
        let xc = x.clone();
        let err = check_gradients(
            move || Ok(xc.mul(&xc)?.sum()),
            &[x],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err} too large for a quadratic");
    }

    #[test]
    fn composite_glu_softmax_chain_checks_out() {
        let w = Tensor::param(&[4, 3], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
        let x = Tensor::param(&[3], vec![0.3, -0.4, 0.8]).unwrap();
        let b = Tensor::param(&[4], vec![0.05, -0.02, 0.0, 0.11]).unwrap();
        let (wc, xc, bc) = (w.clone(), x.clone(), b.clone());
        let loss = move || {
            let h = Tensor::affine(&wc, &xc, &bc)?.glu()?;
            let p = h.softmax()?;
            // a curved functional of the probabilities
            p.mul(&p)?.sum().scale(0.5).add(&h.sum().scale(0.25))
        };
        let err = check_gradients(loss, &[w, x, b], &GradCheck::default()).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let xc = x.clone();
        let res = check_gradients(
            move || Ok(xc.scale(f64::INFINITY).sum()),
            &[x],
            &GradCheck::default(),
        );
        assert!(matches!(res, Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn empty_parameter_list_is_rejected() {
        let res = check_gradients(|| Ok(Tensor::scalar(1.0)), &[], &GradCheck::default());
        assert!(matches!(res, Err(TensorError::Empty { .. })));
    }
}
