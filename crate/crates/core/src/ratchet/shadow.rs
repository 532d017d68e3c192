use nalgebra::{DMatrix, SymmetricEigen};

use crate::dynamics::{CollapseOp, LindbladSystem};
use crate::hilbert::Operator;
use crate::{Error, Result, C64};

/// A lossy shadow element coupled as `g (A S† + A† S)` to the primary
/// system, with excitation energy `nu` and decay rate `gamma_s`.
///
/// `op` is the primary-space operator `A` that accompanies creation of a
/// shadow excitation (e.g. `a_P†` for a two-photon refill drive, `σ⁻` for an
/// exchange coupling).
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowChannel {
    pub op: Operator,
    pub coupling: f64,
    pub nu: f64,
    pub gamma_s: f64,
}

/// Relative tolerance for treating primary eigenvalues as degenerate.
const DEGENERACY_TOL: f64 = 1e-9;

/// Eigen-decomposition with near-degenerate eigenvalues snapped to their
/// cluster mean, so the dressing below is exactly block-basis independent.
fn eigen(h: &Operator) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let eig = SymmetricEigen::new(h.matrix().clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue of the primary Hamiltonian".into()));
    }
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut energies = eig.eigenvalues.as_slice().to_vec();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= DEGENERACY_TOL * scale {
            end += 1;
        }
        let mean = order[start..end].iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / (end - start) as f64;
        for &i in &order[start..end] {
            energies[i] = mean;
        }
        start = end;
    }
    Ok((energies, eig.eigenvectors))
}

/// Modified operator `Ã` built element-wise in the eigenbasis of `h`:
/// `Ã_ij = g A_ij / sqrt((E_i - E_j + ν)² + ΓS²/4 + g²)`, returned in the
/// computational basis.
pub fn dress_operator(h: &Operator, op: &Operator, coupling: f64, nu: f64, gamma_s: f64) -> Result<Operator> {
    if op.space() != h.space() {
        return Err(Error::SpaceMismatch(format!("`{}` on {} vs primary {}", op.label(), op.space(), h.space())));
    }
    let (e, u) = eigen(h)?;
    Ok(dress_in_basis(&e, &u, op, coupling, nu, gamma_s))
}

fn dress_in_basis(e: &[f64], u: &DMatrix<C64>, op: &Operator, g: f64, nu: f64, gamma_s: f64) -> Operator {
    let a = u.adjoint() * op.matrix() * u;
    let n = e.len();
    let s2 = gamma_s * gamma_s / 4.0 + g * g;
    let dressed = DMatrix::from_fn(n, n, |i, j| {
        let d = e[i] - e[j] + nu;
        let f = if s2 == 0.0 && d == 0.0 { 0.0 } else { g / (d * d + s2).sqrt() };
        a[(i, j)] * f
    });
    let m = u * dressed * u.adjoint();
    Operator::new(op.space().clone(), m, format!("~{}", op.label())).expect("same space")
}

/// Reduced system on the primary space: the primary's own Hamiltonian and
/// collapse channels plus one channel `sqrt(ΓS) Ã` per shadow element.
pub fn shadow_eliminate(primary: &LindbladSystem, channels: &[ShadowChannel]) -> Result<LindbladSystem> {
    if primary.is_time_dependent() {
        return Err(Error::InvalidParameter("shadow elimination needs a time-independent primary".into()));
    }
    let h = primary.hamiltonian().base();
    let (e, u) = eigen(h)?;
    let mut collapse = primary.collapse_ops().to_vec();
    for ch in channels {
        if ch.op.space() != primary.space() {
            return Err(Error::SpaceMismatch(format!("shadow channel `{}` not on the primary space", ch.op.label())));
        }
        if !(ch.gamma_s > 0.0) || !ch.coupling.is_finite() || !ch.nu.is_finite() {
            return Err(Error::InvalidParameter(format!("shadow channel `{}` needs GammaS > 0 and finite coupling", ch.op.label())));
        }
        collapse.push(CollapseOp::new(dress_in_basis(&e, &u, &ch.op, ch.coupling, ch.nu, ch.gamma_s), ch.gamma_s));
    }
    LindbladSystem::new(h.clone(), collapse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::liouvillian;
    use crate::hilbert::{creation, embed, ladder, projector, HilbertSpace};

    fn three_level_primary(delta: f64, gamma_p: f64) -> LindbladSystem {
        let h = &projector(3, 2, 2).unwrap() * delta;
        LindbladSystem::new(h, vec![CollapseOp::new(ladder(3).unwrap(), gamma_p)]).unwrap()
    }

    #[test]
    fn zero_coupling_gives_bare_primary() {
        let p = three_level_primary(20.0, 0.01);
        let ch = ShadowChannel { op: creation(3).unwrap(), coupling: 0.0, nu: 0.0, gamma_s: 2.0 };
        let r = shadow_eliminate(&p, &[ch]).unwrap();
        assert_eq!(r.collapse_ops().len(), 2);
        assert_eq!(r.collapse_ops()[1].op.norm(), 0.0);
        assert!((liouvillian(&r).unwrap() - liouvillian(&p).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn resonant_element_value() {
        let (om, gs, delta) = (1.0, 2.0, 20.0);
        let p = three_level_primary(delta, 0.01);
        let ch = ShadowChannel { op: creation(3).unwrap(), coupling: om, nu: 0.0, gamma_s: gs };
        let r = shadow_eliminate(&p, &[ch]).unwrap();
        let at = &r.collapse_ops()[1].op;
        // |0> -> |1> is resonant, |1> -> |2> detuned by Δ.
        let expect01 = om / (gs * gs / 4.0 + om * om).sqrt();
        assert!((at.get(1, 0).norm() - expect01).abs() < 1e-12);
        let expect12 = om * 2f64.sqrt() / (delta * delta + gs * gs / 4.0 + om * om).sqrt();
        assert!((at.get(2, 1).norm() - expect12).abs() < 1e-12);
    }

    #[test]
    fn degenerate_block_basis_independence() {
        // Two degenerate levels: the dressing must not depend on the basis
        // the eigensolver picks inside the block.
        let sp = HilbertSpace::new(&[2, 2]).unwrap();
        let h = &(&embed(&projector(2, 1, 1).unwrap(), 0, &sp).unwrap() + &embed(&projector(2, 1, 1).unwrap(), 1, &sp).unwrap()) * 3.0;
        let a = &embed(&ladder(2).unwrap(), 0, &sp).unwrap() + &(&embed(&ladder(2).unwrap(), 1, &sp).unwrap() * 0.4);
        let d1 = dress_operator(&h, &a, 0.3, 3.0, 0.5).unwrap();
        // Rotate inside the degenerate |01>,|10> block and dress in that basis.
        let (e, mut u) = eigen(&h).unwrap();
        let block: Vec<usize> = (0..4).filter(|&i| (e[i] - 3.0).abs() < 1e-12).collect();
        assert_eq!(block.len(), 2);
        let (c, s) = (0.6, C64::new(0.0, 0.8));
        let (x, y) = (u.column(block[0]).into_owned(), u.column(block[1]).into_owned());
        u.set_column(block[0], &(&x * C64::new(c, 0.0) + &y * s));
        u.set_column(block[1], &(&x * (-s.conj()) + &y * C64::new(c, 0.0)));
        let d2 = dress_in_basis(&e, &u, &a, 0.3, 3.0, 0.5);
        assert!((d1.matrix() - d2.matrix()).norm() < 1e-12);
    }

    #[test]
    fn channel_order_does_not_matter() {
        let sp = HilbertSpace::new(&[3, 3]).unwrap();
        let h = &embed(&projector(3, 2, 2).unwrap(), 0, &sp).unwrap() + &(&embed(&projector(3, 2, 2).unwrap(), 1, &sp).unwrap() * 2.0);
        let p = LindbladSystem::new(h, vec![]).unwrap();
        let c0 = ShadowChannel { op: embed(&creation(3).unwrap(), 0, &sp).unwrap(), coupling: 0.4, nu: 0.1, gamma_s: 1.0 };
        let c1 = ShadowChannel { op: embed(&creation(3).unwrap(), 1, &sp).unwrap(), coupling: 0.2, nu: -0.3, gamma_s: 0.7 };
        let a = shadow_eliminate(&p, &[c0.clone(), c1.clone()]).unwrap();
        let b = shadow_eliminate(&p, &[c1, c0]).unwrap();
        assert!((liouvillian(&a).unwrap() - liouvillian(&b).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn rejects_foreign_operator() {
        let p = three_level_primary(5.0, 0.1);
        let ch = ShadowChannel { op: creation(2).unwrap(), coupling: 1.0, nu: 0.0, gamma_s: 1.0 };
        assert!(matches!(shadow_eliminate(&p, &[ch]), Err(Error::SpaceMismatch(_))));
    }
}
