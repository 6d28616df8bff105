//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Segment, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// Builds a scalar loss from leaves recorded on `tape`.
pub type LossFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var, DiffError> + 'a;

fn loss_value(inputs: &[Tensor], f: &LossFn) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Reverse-mode gradients of `f` with respect to every input.
pub fn analytic(inputs: &[Tensor], f: &LossFn) -> Result<Vec<Tensor>, DiffError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Central differences with step `h`.
pub fn numeric(inputs: &[Tensor], f: &LossFn, h: f64) -> Result<Vec<Tensor>, DiffError> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for which in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[which].shape());
        for idx in 0..inputs[which].len() {
            let orig = inputs[which].values()[idx];
            work[which].values_mut()[idx] = orig + h;
            let plus = loss_value(&work, f)?;
            work[which].values_mut()[idx] = orig - h;
            let minus = loss_value(&work, f)?;
            work[which].values_mut()[idx] = orig;
            g.values_mut()[idx] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-8)
}

/// Worst relative error over all inputs of one case.
pub fn check(inputs: &[Tensor], f: &LossFn) -> Result<f64, DiffError> {
    let a = analytic(inputs, f)?;
    let n = numeric(inputs, f, STEP)?;
    Ok(a.iter().zip(&n).map(|(x, y)| relative_error(x, y)).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub worst: f64,
}

pub const OPS: [&str; 17] = [
    "matmul",
    "transpose",
    "linear",
    "add",
    "add_row",
    "mul",
    "scale",
    "gelu",
    "layernorm",
    "softmax_rows",
    "softmax_cols",
    "l2_normalize",
    "dot",
    "sum",
    "embedding_gather",
    "cross_entropy",
    "attention",
];

/// Contracts a tensor-valued node against fixed random weights.
fn project(t: &mut Tape, x: Var, seed: u64) -> Result<Var, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let w = Tensor::randn(t.value(x).shape(), 1.0, &mut rng);
    let w = t.constant(w);
    t.dot(x, w)
}

type Case = (Vec<Tensor>, Box<LossFn<'static>>);

fn case(op: &str, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let t = |shape: &[usize], r: &mut ChaCha8Rng| Tensor::randn(shape, 1.0, r);
    macro_rules! unary {
        ($shape:expr, |$tp:ident, $x:ident| $body:expr) => {
            (
                vec![t(&$shape, r)],
                Box::new(move |$tp: &mut Tape, v: &[Var]| {
                    let $x = v[0];
                    let y = $body?;
                    project($tp, y, seed)
                }),
            )
        };
    }
    match op {
        "matmul" => (
            vec![t(&[3, 4], r), t(&[4, 2], r)],
            Box::new(move |tp: &mut Tape, v: &[Var]| {
                let y = tp.matmul(v[0], v[1])?;
                project(tp, y, seed)
            }),
        ),
        "transpose" => unary!([3, 5], |tp, x| tp.transpose(x)),
        "linear" => (
            vec![t(&[4, 3], r), t(&[5, 3], r), t(&[5], r)],
            Box::new(move |tp: &mut Tape, v: &[Var]| {
                let y = tp.linear(v[0], v[1], Some(v[2]))?;
                project(tp, y, seed)
            }),
        ),
        "add" | "mul" => {
            let is_add = op == "add";
            (
                vec![t(&[2, 3], r), t(&[2, 3], r)],
                Box::new(move |tp: &mut Tape, v: &[Var]| {
                    let y = if is_add { tp.add(v[0], v[1])? } else { tp.mul(v[0], v[1])? };
                    project(tp, y, seed)
                }),
            )
        }
        "add_row" => (
            vec![t(&[4, 3], r), t(&[3], r)],
            Box::new(move |tp: &mut Tape, v: &[Var]| {
                let y = tp.add_row(v[0], v[1])?;
                project(tp, y, seed)
            }),
        ),
        "scale" => {
            let c = r.random_range(-2.0..2.0);
            unary!([6], |tp, x| tp.scale(x, c))
        }
        "gelu" => unary!([3, 4], |tp, x| tp.gelu(x)),
        "layernorm" => (
            vec![t(&[3, 5], r), t(&[5], r), t(&[5], r)],
            Box::new(move |tp: &mut Tape, v: &[Var]| {
                let y = tp.layernorm(v[0], v[1], v[2], 1e-5)?;
                project(tp, y, seed)
            }),
        ),
        "softmax_rows" => unary!([3, 4], |tp, x| tp.softmax(x, 1)),
        "softmax_cols" => unary!([3, 4], |tp, x| tp.softmax(x, 0)),
        "l2_normalize" => unary!([3, 4], |tp, x| tp.l2_normalize(x)),
        "dot" => (
            vec![t(&[7], r), t(&[7], r)],
            Box::new(|tp: &mut Tape, v: &[Var]| tp.dot(v[0], v[1])),
        ),
        "sum" => (
            vec![t(&[2, 5], r)],
            Box::new(|tp: &mut Tape, v: &[Var]| {
                let sq = tp.mul(v[0], v[0])?;
                tp.sum(sq)
            }),
        ),
        "embedding_gather" => {
            let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
            unary!([4, 3], |tp, x| tp.embedding_gather(x, &ids))
        }
        "cross_entropy" => {
            let targets: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
            (
                vec![t(&[4, 3], r)],
                Box::new(move |tp: &mut Tape, v: &[Var]| tp.cross_entropy(v[0], &targets)),
            )
        }
        "attention" => {
            let segments = vec![Segment { start: 0, len: 2 }, Segment { start: 2, len: 3 }];
            (
                vec![t(&[5, 4], r), t(&[5, 4], r), t(&[5, 4], r)],
                Box::new(move |tp: &mut Tape, v: &[Var]| {
                    let y = tp.attention(v[0], v[1], v[2], &segments, 2)?;
                    project(tp, y, seed)
                }),
            )
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Checks every op in [`OPS`] on `cases` random inputs each.
pub fn op_suite(cases: usize, seed: u64) -> Result<Vec<OpReport>, DiffError> {
    OPS.iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut worst = 0.0f64;
            for c in 0..cases {
                let (inputs, f) = case(op, seed.wrapping_mul(1_000_003).wrapping_add((i * cases + c) as u64));
                worst = worst.max(check(&inputs, &*f)?);
            }
            Ok(OpReport { op, cases, worst })
        })
        .collect()
}
