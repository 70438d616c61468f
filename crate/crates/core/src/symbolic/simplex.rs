//! Nelder–Mead downhill simplex on a box, in unit-cube coordinates.

/// Stopping and step controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Stop when the spread of objective values falls below
    /// `f_tol · (|f_best| + f_floor)` and the simplex is within `√x_tol`.
    pub f_tol: f64,
    pub f_floor: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 4000,
            initial_step: 0.1,
            f_tol: 1e-13,
            f_floor: 1e-300,
            x_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Minimizes `f` from `x0` with the standard reflection, expansion,
/// contraction and shrink moves.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let k = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..k {
        let mut p = x0.to_vec();
        // step inward when the start sits on the upper face
        p[i] += if x0[i] + opts.initial_step > 1.0 {
            -opts.initial_step
        } else {
            opts.initial_step
        };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=k).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[k] - vals[0];
        let size = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        // a flat spread alone can be a tie straddling the minimum
        let flat = spread.is_finite() && spread <= opts.f_tol * (vals[0].abs() + opts.f_floor);
        if size <= opts.x_tol || (flat && size <= opts.x_tol.sqrt()) {
            break;
        }

        let centroid: Vec<f64> = (0..k)
            .map(|d| pts[..k].iter().map(|p| p[d]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { (0..k).map(|d| centroid[d] + t * (pts[k][d] - centroid[d])).collect() };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[k] = xe;
                vals[k] = fe;
            } else {
                pts[k] = xr;
                vals[k] = fr;
            }
            continue;
        }
        if fr < vals[k - 1] {
            pts[k] = xr;
            vals[k] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[k] {
            let x = along(-0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < vals[k].min(fr) {
            pts[k] = xc;
            vals[k] = fc;
            continue;
        }
        for i in 1..=k {
            let p: Vec<f64> = (0..k).map(|d| pts[0][d] + 0.5 * (pts[i][d] - pts[0][d])).collect();
            vals[i] = eval(&p, &mut evals);
            pts[i] = p;
        }
    }
    let best = (0..vals.len())
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        evals,
    }
}
