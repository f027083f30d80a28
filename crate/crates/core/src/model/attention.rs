//! Additive attention gate.
//!
//! For a feature map `x` and a gating signal `g` at half its resolution:
//!
//! ```text
//! q     = ψ · relu(W_x · x↓2 + W_g · g + b_g) + b_ψ      (1×1×1 convolutions)
//! α     = upsample×2(sigmoid(q))
//! x̂_i,c = x_i,c · α_i
//! ```
//!
//! `x↓2` is realised by giving `W_x` stride 2, so the coefficients are computed
//! on the coarse grid and trilinearly brought back to the resolution of `x`.

use crate::tensor::{Result, Scalar, Tape, TensorError, Var};

/// Tape handles for the five parameter groups of one gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateVars {
    /// `F_int × C_x × 1 × 1 × 1`
    pub w_x: Var,
    /// `F_int × C_g × 1 × 1 × 1`
    pub w_g: Var,
    /// `F_int`
    pub b_g: Var,
    /// `1 × F_int × 1 × 1 × 1`
    pub psi: Var,
    /// `1`
    pub b_psi: Var,
}

/// Internal channel count of a gate for a `c_x`-channel input.
pub fn gate_channels(c_x: usize) -> usize {
    (c_x / 2).max(1)
}

/// Returns the gated features `x̂` and the coefficients `α` (at the resolution of `x`).
pub fn attention_gate<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    g: Var,
    p: &GateVars,
) -> Result<(Var, Var)> {
    let xs = tape.shape(x).to_vec();
    let gs = tape.shape(g).to_vec();
    let halved =
        xs.len() == 5 && gs.len() == 5 && xs[0] == gs[0] && (2..5).all(|a| xs[a] == 2 * gs[a]);
    if !halved {
        return Err(TensorError::Incompatible {
            op: "attention_gate (gating signal must have exactly half the spatial extent of x)",
            left: xs,
            right: gs,
        });
    }
    let theta_x = tape.conv3d(x, p.w_x, None, 2, 0)?;
    let phi_g = tape.conv3d(g, p.w_g, Some(p.b_g), 1, 0)?;
    let joint = tape.add(theta_x, phi_g)?;
    let joint = tape.relu(joint)?;
    let q = tape.conv3d(joint, p.psi, Some(p.b_psi), 1, 0)?;
    let alpha_coarse = tape.sigmoid(q)?;
    let alpha = tape.upsample_trilinear(alpha_coarse, 2)?;
    let gated = tape.mul(x, alpha)?;
    Ok((gated, alpha))
}
