//! Chain-Ladder and Mack error written from the textbook formulas on a
//! regular runoff triangle of cumulative claims.

pub struct MackDirect {
    pub factors: Vec<f64>,
    pub reserve: f64,
    pub process_variance: f64,
    pub estimation_variance: f64,
}

impl MackDirect {
    pub fn std_error(&self) -> f64 {
        (self.process_variance + self.estimation_variance).sqrt()
    }
}

/// `rows[i]` holds the observed cumulative claims of origin `i`; the
/// triangle is square with `rows[i].len() == n - i`.
pub fn mack_direct(rows: &[Vec<f64>]) -> MackDirect {
    let n = rows.len();
    let steps = n - 1;
    let mut f = vec![0.0; steps];
    let mut s = vec![0.0; steps];
    let mut sigma2 = vec![0.0; steps];
    for k in 0..steps {
        let used: Vec<&Vec<f64>> = rows.iter().filter(|r| r.len() > k + 1).collect();
        s[k] = used.iter().map(|r| r[k]).sum();
        f[k] = used.iter().map(|r| r[k + 1]).sum::<f64>() / s[k];
        if used.len() > 1 {
            sigma2[k] = used
                .iter()
                .map(|r| r[k] * (r[k + 1] / r[k] - f[k]).powi(2))
                .sum::<f64>()
                / (used.len() - 1) as f64;
        }
    }
    if steps >= 3 {
        let (a, b) = (sigma2[steps - 3], sigma2[steps - 2]);
        sigma2[steps - 1] = if a > 0.0 { (b * b / a).min(a).min(b) } else { 0.0 };
    } else if steps == 2 {
        sigma2[1] = sigma2[0];
    }

    // projected cumulative path of every origin
    let paths: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut p = r.clone();
            while p.len() < n {
                let k = p.len() - 1;
                p.push(p[k] * f[k]);
            }
            p
        })
        .collect();

    let mut reserve = 0.0;
    let mut process = 0.0;
    for (r, p) in rows.iter().zip(&paths) {
        reserve += p[n - 1] - r[r.len() - 1];
        // Var(C_{k+1}) = f_k^2 Var(C_k) + sigma_k^2 C_k
        let mut v = 0.0;
        for k in r.len() - 1..steps {
            v = f[k] * f[k] * v + sigma2[k] * p[k];
        }
        process += v;
    }

    // sum over steps of a_k (sum of ultimates still developing through k)^2
    let mut estimation = 0.0;
    for k in 0..steps {
        let a = sigma2[k] / (f[k] * f[k] * s[k]);
        let exposed: f64 = rows
            .iter()
            .zip(&paths)
            .filter(|(r, _)| r.len() - 1 <= k)
            .map(|(_, p)| p[n - 1])
            .sum();
        estimation += a * exposed * exposed;
    }

    MackDirect {
        factors: f,
        reserve,
        process_variance: process,
        estimation_variance: estimation,
    }
}
