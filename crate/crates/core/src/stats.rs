use serde::{Deserialize, Serialize};

use crate::error::{Error, Operand, Result};
use crate::image::RgbImage;

/// Pearson product-moment correlation, accumulated in f64.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("pearson over {} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(Operand::First));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(Operand::Second));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// PSNR in display space `[0, 1]` with peak 1. Zero error gives
/// `f32::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub channels: [f32; 3],
    /// Mean of the three channel values.
    pub average: f32,
    pub mse: [f32; 3],
}

fn psnr_db(mse: f64) -> f32 {
    if mse == 0.0 {
        f32::INFINITY
    } else {
        (10.0 * (1.0 / mse).log10()) as f32
    }
}

pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<Psnr> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape("psnr of differently sized images".into()));
    }
    let mut mse = [0.0f64; 3];
    for (c, m) in mse.iter_mut().enumerate() {
        let sum: f64 = pred
            .channel(c)
            .iter()
            .zip(gt.channel(c))
            .map(|(a, b)| {
                // Display space halves model-space differences.
                let d = 0.5 * (*a as f64 - *b as f64);
                d * d
            })
            .sum();
        *m = sum / pred.pixels() as f64;
    }
    Ok(psnr_from_mse(mse))
}

/// PSNR from per-channel display-space MSE.
pub fn psnr_from_mse(mse: [f64; 3]) -> Psnr {
    let channels = mse.map(psnr_db);
    Psnr {
        channels,
        average: (channels.iter().map(|&v| v as f64).sum::<f64>() / 3.0) as f32,
        mse: mse.map(|v| v as f32),
    }
}

/// Arithmetic mean over pixels, accumulated in f64.
pub fn pixel_mean(map: &[f32]) -> f32 {
    (map.iter().map(|&v| v as f64).sum::<f64>() / map.len() as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_edge_cases() {
        let xs = [1.0, 2.0, 3.0, 5.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance(Operand::First))));
        assert!(matches!(pearson(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance(Operand::Second))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(4, 4, -1.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap().average, f32::INFINITY);
        // Display values 0 and 0.5 are model values -1 and 0.
        let b = RgbImage::filled(4, 4, 0.0).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert_eq!(p.mse, [0.25; 3]);
        assert!((p.average - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn pixel_mean_of_constant_map() {
        assert_eq!(pixel_mean(&[0.375; 4]), 0.375);
    }
}
