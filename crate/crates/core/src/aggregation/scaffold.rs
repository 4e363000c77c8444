//! SCAFFOLD control-variate bookkeeping (server step, client correction and
//! the "option II" control refresh).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::ParamVector;

use super::{fedavg_aggregate, sorted_round, ClientUpdate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldState {
    pub server_control: ParamVector,
    /// Indexed by client id.
    pub client_controls: Vec<ParamVector>,
}

impl ScaffoldState {
    pub fn new(dim: usize, num_clients: usize) -> Self {
        ScaffoldState {
            server_control: ParamVector::zeros(dim),
            client_controls: vec![ParamVector::zeros(dim); num_clients],
        }
    }
}

/// `g − c_k + c`, in place.
pub fn scaffold_correct_gradient(g: &mut [f64], client_control: &[f64], server_control: &[f64]) {
    for ((gi, ck), c) in g.iter_mut().zip(client_control).zip(server_control) {
        *gi += c - ck;
    }
}

/// `c_k⁺ = c_k − c + (w_global − w_local)/Σηₛ`, where `Σηₛ` is the sum of
/// step sizes used during local training, each scaled by its momentum gain
/// `(1 − βˢ⁺¹)/(1 − β)`. Returns `c_k⁺ − c_k`.
pub fn client_control_update(
    server_control: &[f64],
    delta: &[f64],
    lr_sum: f64,
) -> Result<ParamVector> {
    check_len(server_control.len(), delta.len())?;
    if !(lr_sum > 0.0) {
        return Ok(ParamVector::zeros(delta.len()));
    }
    Ok(ParamVector::new(
        server_control
            .iter()
            .zip(delta)
            .map(|(c, d)| -c - d / lr_sum)
            .collect(),
    ))
}

/// Model step `w + Σ p_k·Δw_k`, server control `c + f·mean_k(Δc_k)` and
/// client controls `c_k + Δc_k`. `control_deltas[i]` belongs to `updates[i]`.
pub fn scaffold_server_step(
    state: &ScaffoldState,
    w: &[f64],
    updates: &[ClientUpdate],
    control_deltas: &[ParamVector],
    participation_fraction: f64,
) -> Result<(ParamVector, ScaffoldState)> {
    sorted_round(updates)?;
    check_len(updates.len(), control_deltas.len())?;
    check_len(state.server_control.len(), w.len())?;
    if !(participation_fraction > 0.0 && participation_fraction <= 1.0) {
        return Err(Error::usage(format!(
            "participation fraction must be in (0, 1], got {participation_fraction}"
        )));
    }
    let model = fedavg_aggregate(w, updates)?;

    let mut next = state.clone();
    let mut pairs: Vec<(&ClientUpdate, &ParamVector)> = updates.iter().zip(control_deltas).collect();
    pairs.sort_by_key(|(u, _)| u.client_id);
    let dim = w.len();
    let mut mean_dc = vec![0.0; dim];
    for (u, dc) in &pairs {
        check_len(dim, dc.len())?;
        let ck = next
            .client_controls
            .get_mut(u.client_id)
            .ok_or_else(|| Error::usage(format!("no control variate for client {}", u.client_id)))?;
        for ((c, d), m) in ck.iter_mut().zip(dc.iter()).zip(mean_dc.iter_mut()) {
            *c += d;
            *m += d;
        }
    }
    let scale = participation_fraction / pairs.len() as f64;
    for (c, m) in next.server_control.iter_mut().zip(&mean_dc) {
        *c += scale * m;
    }
    Ok((model, next))
}
