use nara::autodiff::{grad_check, Mat, Tape, Var};
use nara::Result;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Case {
    r: usize,
    c: usize,
    m: usize,
    pool: Vec<f64>,
}

impl Case {
    fn mat(&self, offset: usize, rows: usize, cols: usize, f: impl Fn(f64) -> f64) -> Mat {
        let data = (0..rows * cols).map(|k| f(self.pool[(offset + k) % self.pool.len()])).collect();
        Mat::new(rows, cols, data).unwrap()
    }

    fn plain(&self, offset: usize, rows: usize, cols: usize) -> Mat {
        self.mat(offset, rows, cols, |v| v)
    }

    fn away_from_zero(&self, offset: usize, rows: usize, cols: usize) -> Mat {
        self.mat(offset, rows, cols, |v| v.signum() * (0.1 + v.abs()))
    }

    fn positive(&self, offset: usize, rows: usize, cols: usize) -> Mat {
        self.mat(offset, rows, cols, |v| 0.5 + v.abs())
    }
}

fn cases() -> impl Strategy<Value = Case> {
    (1usize..5, 1usize..5, 1usize..5, prop::collection::vec(-2.0f64..2.0, 97)).prop_map(|(r, c, m, pool)| Case { r, c, m, pool })
}

fn config() -> Config {
    Config {
        cases: 100,
        rng_seed: RngSeed::Fixed(7),
        failure_persistence: None,
        ..Config::default()
    }
}

/// Contract the op output with fixed weights drawn from the case pool.
fn check(case: &Case, inputs: Vec<Mat>, op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    grad_check(
        |t, vars| {
            let out = op(t, vars)?;
            let (rows, cols) = t.value(out).shape();
            let w = case.plain(31, rows, cols);
            let weighted = t.mul_const(out, w)?;
            t.sum(weighted)
        },
        &inputs,
        EPS,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn elementwise_binary(case in cases()) {
        let (r, c) = (case.r, case.c);
        let ab = vec![case.plain(0, r, c), case.plain(17, r, c)];
        prop_assert!(check(&case, ab.clone(), |t, v| t.add(v[0], v[1])) < TOL);
        prop_assert!(check(&case, ab.clone(), |t, v| t.sub(v[0], v[1])) < TOL);
        prop_assert!(check(&case, ab, |t, v| t.mul(v[0], v[1])) < TOL);
    }

    #[test]
    fn matmul_and_transpose(case in cases()) {
        let ab = vec![case.plain(0, case.r, case.m), case.plain(23, case.m, case.c)];
        prop_assert!(check(&case, ab, |t, v| t.matmul(v[0], v[1])) < TOL);
        prop_assert!(check(&case, vec![case.plain(5, case.r, case.c)], |t, v| t.transpose(v[0])) < TOL);
    }

    #[test]
    fn shape_ops(case in cases()) {
        let (r, c, m) = (case.r, case.c, case.m);
        let rows = vec![case.plain(0, r, c), case.plain(11, m, c)];
        prop_assert!(check(&case, rows, |t, v| t.concat_rows(&[v[0], v[1]])) < TOL);
        let cols = vec![case.plain(0, r, c), case.plain(11, r, m)];
        prop_assert!(check(&case, cols, |t, v| t.concat_cols(&[v[0], v[1]])) < TOL);
        let a = vec![case.plain(3, r, c)];
        let idx: Vec<usize> = (0..m + 2).map(|k| (k * 7 + m) % r).collect();
        prop_assert!(check(&case, a.clone(), |t, v| t.gather_rows(v[0], &idx)) < TOL);
        prop_assert!(check(&case, a.clone(), |t, v| t.slice_rows(v[0], (r - 1) / 2, r)) < TOL);
        prop_assert!(check(&case, a.clone(), |t, v| t.slice_cols(v[0], (c - 1) / 2, c)) < TOL);
        let at: Vec<(usize, usize)> = (0..m + 1).map(|k| ((k * 3) % r, (k * 5 + 1) % c)).collect();
        prop_assert!(check(&case, a, |t, v| t.pick(v[0], &at)) < TOL);
    }

    #[test]
    fn activations(case in cases()) {
        let (r, c) = (case.r, case.c);
        let a = vec![case.plain(0, r, c)];
        prop_assert!(check(&case, a.clone(), |t, v| t.softmax_rows(v[0])) < TOL);
        prop_assert!(check(&case, a.clone(), |t, v| t.sigmoid(v[0])) < TOL);
        prop_assert!(check(&case, a, |t, v| t.exp(v[0])) < TOL);
        prop_assert!(check(&case, vec![case.away_from_zero(0, r, c)], |t, v| t.relu(v[0])) < TOL);
        prop_assert!(check(&case, vec![case.positive(0, r, c)], |t, v| t.log(v[0])) < TOL);
    }

    #[test]
    fn reductions(case in cases()) {
        let (r, c) = (case.r, case.c);
        let a = vec![case.plain(0, r, c)];
        prop_assert!(check(&case, a.clone(), |t, v| t.sum(v[0])) < TOL);
        prop_assert!(check(&case, a.clone(), |t, v| t.mean(v[0])) < TOL);
        prop_assert!(check(&case, a, |t, v| t.sum_rows(v[0])) < TOL);
        let nz = vec![case.away_from_zero(0, r, c)];
        prop_assert!(check(&case, nz, |t, v| t.l2_normalize_rows(v[0])) < TOL);
        let mask: Vec<bool> = (0..r * c).map(|k| k % c == 0 || case.pool[k] > 0.0).collect();
        prop_assert!(check(&case, vec![case.plain(0, r, c)], |t, v| t.masked_logsumexp_rows(v[0], &mask)) < TOL);
    }

    #[test]
    fn broadcasts(case in cases()) {
        let (r, c) = (case.r, case.c);
        let s = case.pool[40];
        let a = vec![case.plain(0, r, c)];
        prop_assert!(check(&case, a.clone(), |t, v| t.scale(v[0], s)) < TOL);
        prop_assert!(check(&case, a.clone(), |t, v| t.add_scalar(v[0], s)) < TOL);
        let k = case.plain(50, r, c);
        prop_assert!(check(&case, a, |t, v| t.mul_const(v[0], k.clone())) < TOL);
        let bias = vec![case.plain(0, r, c), case.plain(60, 1, c)];
        prop_assert!(check(&case, bias, |t, v| t.add_bias(v[0], v[1])) < TOL);
        let col = vec![case.plain(0, r, c), case.plain(70, r, 1)];
        prop_assert!(check(&case, col, |t, v| t.mul_col(v[0], v[1])) < TOL);
    }

    #[test]
    fn layer_norm(case in cases()) {
        let c = case.c + 2;
        let inputs = vec![case.plain(0, case.r, c), case.plain(60, 1, c), case.plain(80, 1, c)];
        prop_assert!(check(&case, inputs, |t, v| t.layer_norm(v[0], v[1], v[2])) < TOL);
    }

    #[test]
    fn shared_attention_map_feeds_both_streams(case in cases()) {
        let (n, d) = (case.r + 1, case.c + 1);
        let inputs = vec![
            case.plain(0, n, d),
            case.plain(13, n, d),
            case.plain(29, n, d),
            case.plain(43, n, d),
        ];
        let err = check(&case, inputs, |t, v| {
            let kt = t.transpose(v[1])?;
            let logits = t.matmul(v[0], kt)?;
            let logits = t.scale(logits, 1.0 / (d as f64).sqrt())?;
            let attn = t.softmax_rows(logits)?;
            let sem = t.matmul(attn, v[2])?;
            let geo = t.matmul(attn, v[3])?;
            t.concat_cols(&[sem, geo])
        });
        prop_assert!(err < TOL, "relative error {err}");
    }
}
