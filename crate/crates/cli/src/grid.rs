use fluidpert::{Error, Result};

fn parse_spec(spec: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::Parse(format!("grid '{spec}' is not of the form A:B:N"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(bad());
    };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok((a, b, n))
}

/// `N` points from `A` to `B`, equally spaced.
pub fn linear(spec: &str) -> Result<Vec<f64>> {
    let (a, b, n) = parse_spec(spec)?;
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect())
}

/// `N` points from `A` to `B`, equally spaced in the logarithm.
pub fn log(spec: &str) -> Result<Vec<f64>> {
    let (a, b, n) = parse_spec(spec)?;
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::Parse(format!(
            "log grid '{spec}' needs positive endpoints"
        )));
    }
    Ok(fluidpert::bench::log_grid(a, b, n))
}

/// `WIDTH:COUNT` histogram bins.
pub fn bins(spec: &str) -> Result<fluidpert::simulate::Binning> {
    let bad = || Error::Parse(format!("bins '{spec}' is not of the form WIDTH:COUNT"));
    let (w, n) = spec.split_once(':').ok_or_else(bad)?;
    Ok(fluidpert::simulate::Binning {
        width: w.trim().parse().map_err(|_| bad())?,
        bins: n.trim().parse().map_err(|_| bad())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(linear("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = log("1e-4:1e-2:3").unwrap();
        assert!((g[1] - 1e-3).abs() < 1e-15);
        assert!(linear("0:1").is_err());
        assert!(log("0:1:4").is_err());
        assert_eq!(bins("0.5:10").unwrap().bins, 10);
    }
}
