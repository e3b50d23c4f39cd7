//! Text loaders for Wardrop problems.

use ndarray::Array2;

use super::{CongestionSpec, DemandSpec, WardropError};
use crate::network::Network;

/// Parses a network file whose `edge` lines may carry a congestion spec
/// after the endpoints, e.g. `edge s d affine_power 1 2`. Edges without one
/// use `default`.
pub fn load_network(text: &str, default: CongestionSpec) -> Result<(Network, Vec<CongestionSpec>), WardropError> {
    let (net, extras) = Network::parse(text)?;
    let costs = extras
        .iter()
        .map(|toks| {
            if toks.is_empty() {
                Ok(default)
            } else {
                toks.join(" ").parse::<CongestionSpec>()
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((net, costs))
}

/// Parses `demand <s> <d> <value>` lines into a fixed matrix, or
/// `mu <s> <value>` / `nu <d> <value>` lines into marginals. Omitted entries
/// are zero.
pub fn parse_demand(text: &str, net: &Network) -> Result<DemandSpec, WardropError> {
    let (ns, nd) = (net.sources().len(), net.dests().len());
    let mut fixed: Option<Array2<f64>> = None;
    let mut marg: Option<(Vec<f64>, Vec<f64>)> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| WardropError::Parse { line, message };
        let toks: Vec<&str> = body.split_whitespace().collect();
        let value = |t: &str| -> Result<f64, WardropError> {
            match t.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
                _ => Err(err(format!("bad demand value '{t}'"))),
            }
        };
        let position = |label: &str, set: &[usize], what: &str| -> Result<usize, WardropError> {
            net.node_by_label(label)
                .and_then(|node| set.iter().position(|&x| x == node))
                .ok_or_else(|| err(format!("'{label}' is not a {what}")))
        };
        match (toks[0], toks.len()) {
            ("demand", 4) => {
                if marg.is_some() {
                    return Err(err("cannot mix `demand` with `mu`/`nu` lines".into()));
                }
                let a = position(toks[1], net.sources(), "source")?;
                let b = position(toks[2], net.dests(), "destination")?;
                fixed.get_or_insert_with(|| Array2::zeros((ns, nd)))[[a, b]] += value(toks[3])?;
            }
            ("mu", 3) | ("nu", 3) => {
                if fixed.is_some() {
                    return Err(err("cannot mix `demand` with `mu`/`nu` lines".into()));
                }
                let (mu, nu) = marg.get_or_insert_with(|| (vec![0.0; ns], vec![0.0; nd]));
                if toks[0] == "mu" {
                    mu[position(toks[1], net.sources(), "source")?] += value(toks[2])?;
                } else {
                    nu[position(toks[1], net.dests(), "destination")?] += value(toks[2])?;
                }
            }
            _ => return Err(err(format!("unrecognized demand line '{body}'"))),
        }
    }
    match (fixed, marg) {
        (Some(g), None) => Ok(DemandSpec::Fixed(g)),
        (None, Some((mu, nu))) => Ok(DemandSpec::Marginals { mu, nu }),
        _ => Ok(DemandSpec::Fixed(Array2::zeros((ns, nd)))),
    }
}
