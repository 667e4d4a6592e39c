//! Flag value parsers.

use safmap::mapping::Scheme;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RateList(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SchemeList(pub Vec<Scheme>);

pub fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// `0,0.01,0.05` or an inclusive `start:stop:step` range.
pub fn rates(s: &str) -> Result<RateList, String> {
    let values = if let Some((start, rest)) = s.split_once(':') {
        let (stop, step) = rest
            .split_once(':')
            .ok_or_else(|| format!("{s:?}: expected start:stop:step"))?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("{x:?} is not a number"));
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(format!("{s:?}: need step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Snap to 12 decimals so 0:0.05:0.01 yields 0.03, not 0.030000000000000002.
        (0..count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("{x:?} is not a number")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("rate {v} is outside [0, 1]"));
    }
    Ok(RateList(values))
}

/// Comma-separated schemes, or `all`.
pub fn schemes(s: &str) -> Result<SchemeList, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(SchemeList(Scheme::ALL.to_vec()));
    }
    s.split(',')
        .map(|x| x.trim().parse::<Scheme>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(SchemeList)
}

/// `ROWSxCOLS`.
pub fn dims(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?}: expected ROWSxCOLS"))?;
    let parse = |x: &str| match x.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("{x:?} is not a positive integer")),
    };
    Ok((parse(r)?, parse(c)?))
}
