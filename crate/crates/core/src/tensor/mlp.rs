use super::math::sigmoid;
use super::store::{mlp_param_count, GroupId, ParameterStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

fn check_layout(store: &ParameterStore, group: GroupId, widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config("layer spec needs at least input and output widths".into()));
    }
    let have = store.values(group).len();
    let need = mlp_param_count(widths);
    if have != need {
        return Err(Error::Config(format!(
            "group `{}` holds {have} values, layer spec {widths:?} needs {need}",
            store.group(group).name()
        )));
    }
    Ok(())
}

/// Fully connected stack stored in one group. Hidden layers use the logistic
/// activation; the last layer is affine.
pub fn mlp_forward(
    store: &ParameterStore,
    group: GroupId,
    widths: &[usize],
    input: &[f64],
) -> Result<Vec<f64>> {
    check_layout(store, group, widths)?;
    if input.len() != widths[0] {
        return Err(Error::Config(format!(
            "input width {} does not match layer spec input {}",
            input.len(),
            widths[0]
        )));
    }
    let params = store.values(group);
    let mut offset = 0;
    let mut act = input.to_vec();
    let last = widths.len() - 2;
    for (l, w) in widths.windows(2).enumerate() {
        let (inp, out) = (w[0], w[1]);
        let weights = &params[offset..offset + inp * out];
        let bias = &params[offset + inp * out..offset + inp * out + out];
        offset += inp * out + out;
        let mut next = Vec::with_capacity(out);
        for o in 0..out {
            // Same accumulation order as the tape's matmul followed by add_row.
            let z: f64 = act
                .iter()
                .zip(&weights[o * inp..(o + 1) * inp])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + bias[o];
            next.push(if l == last { z } else { sigmoid(z) });
        }
        act = next;
    }
    Ok(act)
}

/// Tape version of [`mlp_forward`] over a batch (`rows x widths[0]`).
pub fn mlp_forward_tape(
    tape: &mut Tape<'_>,
    group: GroupId,
    widths: &[usize],
    input: NodeId,
) -> Result<NodeId> {
    check_layout(tape.store(), group, widths)?;
    if tape.value(input).cols() != widths[0] {
        return Err(Error::Config(format!(
            "input width {} does not match layer spec input {}",
            tape.value(input).cols(),
            widths[0]
        )));
    }
    let mut offset = 0;
    let mut act = input;
    let last = widths.len() - 2;
    for (l, w) in widths.windows(2).enumerate() {
        let (inp, out) = (w[0], w[1]);
        let weights = tape.param(group, offset, out, inp)?;
        let bias = tape.param(group, offset + inp * out, 1, out)?;
        offset += inp * out + out;
        let z = tape.matmul_t(act, weights)?;
        let z = tape.add_row(z, bias)?;
        act = if l == last { z } else { tape.sigmoid(z) };
    }
    Ok(act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::store::{init_mlp, init_rng};
    use crate::tensor::Tensor;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut s = ParameterStore::new();
        let g = s.add_group("m", vec![0.0; mlp_param_count(&[3, 4, 2])]).unwrap();
        assert_eq!(mlp_forward(&s, g, &[3, 4, 2], &[1.0, -7.0, 2.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut s = ParameterStore::new();
        let g = s.add_group("m", vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mlp_forward(&s, g, &[2, 2], &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = ParameterStore::new();
        let g = s.add_group("m", vec![0.0; 5]).unwrap();
        assert!(matches!(mlp_forward(&s, g, &[2, 2], &[1.0, 1.0]), Err(Error::Config(_))));
        let g2 = s.add_group("n", vec![0.0; 6]).unwrap();
        assert!(matches!(mlp_forward(&s, g2, &[2, 2], &[1.0]), Err(Error::Config(_))));
    }

    /// Independent re-implementation: explicit per-layer matrices, no shared helpers.
    fn oracle_forward(params: &[f64], widths: &[usize], input: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = input.to_vec();
        let mut p = params.iter();
        for (l, w) in widths.windows(2).enumerate() {
            let m: Vec<Vec<f64>> = (0..w[1]).map(|_| p.by_ref().take(w[0]).copied().collect()).collect();
            let b: Vec<f64> = p.by_ref().take(w[1]).copied().collect();
            x = m
                .iter()
                .zip(&b)
                .map(|(row, bias)| {
                    let z = row.iter().zip(&x).fold(0.0, |acc, (a, c)| acc + a * c) + bias;
                    if l + 2 == widths.len() {
                        z
                    } else {
                        (1.0 + (-z).exp()).recip()
                    }
                })
                .collect();
        }
        x
    }

    #[test]
    fn seeded_store_matches_oracle() {
        let widths = [4, 6, 5, 3];
        let mut s = ParameterStore::new();
        let g = s.add_group("m", init_mlp(&widths, &mut init_rng(7))).unwrap();
        let got = mlp_forward(&s, g, &widths, &[1.0; 4]).unwrap();
        let want = oracle_forward(s.values(g), &widths, &[1.0; 4]);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn tape_forward_is_bit_identical_to_plain_forward() {
        let widths = [3, 5, 2];
        let mut s = ParameterStore::new();
        let g = s.add_group("m", init_mlp(&widths, &mut init_rng(3))).unwrap();
        let rows = [[0.3, -1.2, 2.0], [1.0, 1.0, 1.0]];
        let mut tape = Tape::new(&s);
        let x = tape.constant(Tensor::new(2, 3, rows.concat()).unwrap());
        let y = mlp_forward_tape(&mut tape, g, &widths, x).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let plain = mlp_forward(&s, g, &widths, row).unwrap();
            for (c, v) in plain.iter().enumerate() {
                assert_eq!(tape.value(y).get(r, c), *v);
            }
        }
    }
}
