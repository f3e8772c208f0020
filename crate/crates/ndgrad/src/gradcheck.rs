//! Central finite-difference gradient checking.
//!
//! Only forward values are used to build the numeric estimate, so the check is
//! independent of the backward rules it validates.

use crate::{Array, Result, Tape, Var};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
pub const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub evaluated: usize,
}

/// Compare backward-pass gradients of a scalar-valued `f` against central
/// differences with the given `step`, over every element of every input.
pub fn check<F>(inputs: &[Array], step: f64, f: F) -> Result<Report>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| grads.wrt(v, &tape)).collect();

    let eval = |arrays: &[Array]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = arrays.iter().map(|a| t.leaf(a.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).data()[0])
    };

    let mut report = Report {
        max_rel_err: 0.0,
        worst: (0, 0),
        evaluated: 0,
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.evaluated += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}

/// A differentiable op exercised by [`run_suite`].
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Vec<usize>>,
    pub f: fn(&mut Tape, &[Var]) -> Result<Var>,
}

/// Contract every output onto a scalar with fixed, non-uniform weights so that
/// each output element carries a distinct cotangent.
pub fn project(t: &mut Tape, v: Var) -> Result<Var> {
    let shape = t.value(v).shape().to_vec();
    let w = t.leaf(Array::from_fn(&shape, |i| (1.7 * i as f64 + 0.3).sin()));
    let p = t.mul(v, w)?;
    t.sum(p)
}

/// One case per differentiable op on the tape.
pub fn op_cases() -> Vec<OpCase> {
    fn case(name: &'static str, inputs: &[&[usize]], f: fn(&mut Tape, &[Var]) -> Result<Var>) -> OpCase {
        OpCase {
            name,
            inputs: inputs.iter().map(|s| s.to_vec()).collect(),
            f,
        }
    }
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        }),
        case("matmul_nt", &[&[3, 4], &[5, 4]], |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            project(t, y)
        }),
        case("add", &[&[2, 3], &[2, 3]], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y)
        }),
        case("sub", &[&[2, 3], &[2, 3]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y)
        }),
        case("mul", &[&[2, 3], &[2, 3]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        }),
        case("add_row", &[&[3, 4], &[4]], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y)
        }),
        case("add_channel_bias", &[&[2, 3, 3], &[2]], |t, v| {
            let y = t.add_channel_bias(v[0], v[1])?;
            project(t, y)
        }),
        case("scale", &[&[5]], |t, v| {
            let y = t.scale(v[0], -0.7)?;
            project(t, y)
        }),
        case("softmax_rows", &[&[3, 5]], |t, v| {
            let y = t.softmax_rows(v[0])?;
            project(t, y)
        }),
        case("layer_norm", &[&[3, 6], &[6], &[6]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y)
        }),
        case("gelu", &[&[7]], |t, v| {
            let y = t.gelu(v[0])?;
            project(t, y)
        }),
        case("leaky_relu", &[&[7]], |t, v| {
            let y = t.leaky_relu(v[0], 0.2)?;
            project(t, y)
        }),
        case("tanh", &[&[7]], |t, v| {
            let y = t.tanh(v[0])?;
            project(t, y)
        }),
        case("sigmoid", &[&[7]], |t, v| {
            let y = t.sigmoid(v[0])?;
            project(t, y)
        }),
        case("log_sigmoid", &[&[7]], |t, v| {
            let y = t.log_sigmoid(v[0])?;
            project(t, y)
        }),
        case("abs", &[&[7]], |t, v| {
            let y = t.abs(v[0])?;
            project(t, y)
        }),
        case("sum", &[&[2, 3]], |t, v| t.sum(v[0])),
        case("mean", &[&[2, 3]], |t, v| t.mean(v[0])),
        case("cross_entropy", &[&[4, 6]], |t, v| t.cross_entropy(v[0], &[0, 5, 2, 2])),
        case("gather", &[&[5, 3]], |t, v| {
            let y = t.gather(v[0], &[4, 0, 4, 2])?;
            project(t, y)
        }),
        case("select_rows", &[&[5, 3]], |t, v| {
            let y = t.select_rows(v[0], &[1, 3, 1])?;
            project(t, y)
        }),
        case("concat_cols", &[&[3, 2], &[3, 4]], |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            project(t, y)
        }),
        case("concat_channels", &[&[1, 3, 3], &[2, 3, 3]], |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            project(t, y)
        }),
        case("conv2d", &[&[2, 5, 5], &[3, 2, 3, 3]], |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1)?;
            project(t, y)
        }),
        case("conv2d_strided", &[&[2, 6, 6], &[2, 2, 4, 4]], |t, v| {
            let y = t.conv2d(v[0], v[1], 2, 1)?;
            project(t, y)
        }),
        case("nearest_upsample2x", &[&[2, 2, 3]], |t, v| {
            let y = t.nearest_upsample2x(v[0])?;
            project(t, y)
        }),
        case("composite_mlp", &[&[3, 4], &[4, 8], &[8], &[4], &[4]], |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_row(h, v[2])?;
            let h = t.gelu(h)?;
            let h = t.matmul_nt(h, v[1])?;
            let h = t.layer_norm(h, v[3], v[4], 1e-5)?;
            let h = t.add(h, v[0])?;
            t.cross_entropy(h, &[1, 0, 3])
        }),
    ]
}

/// SplitMix64 stream for suite inputs; keeps the library free of RNG deps.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random input in `±[0.05, 2)`, kept away from the kinks of `abs` and `leaky_relu`.
pub fn random_input(shape: &[usize], seed: u64) -> Array {
    let mut s = seed;
    Array::from_fn(shape, |_| {
        let u = (splitmix(&mut s) >> 11) as f64 / (1u64 << 53) as f64;
        let mag = 0.05 + 1.95 * u;
        if splitmix(&mut s) & 1 == 0 {
            mag
        } else {
            -mag
        }
    })
}

/// Worst relative error of each op case over `seeds` random draws.
pub fn run_suite(seeds: u64, step: f64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    for case in op_cases() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let inputs: Vec<Array> = case
                .inputs
                .iter()
                .enumerate()
                .map(|(k, s)| random_input(s, seed * 1000 + k as u64))
                .collect();
            let report = check(&inputs, step, case.f)?;
            worst = worst.max(report.max_rel_err);
        }
        out.push((case.name, worst));
    }
    Ok(out)
}
