//! Arbitrary-precision evaluation of the polarity-imbalance score
//! |e^{r_pos} - e^{r_neg}| / e^{r_neu} using exact rational arithmetic.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

/// Taylor expansion of e^x with exact rational arithmetic.
///
/// For |x| <= 2 the truncation error after 40 terms is below 1e-30, far
/// under what an f64 comparison can resolve.
pub fn exp_rational(x: &BigRational, terms: u32) -> BigRational {
    let mut sum = BigRational::one();
    let mut term = BigRational::one();
    for n in 1..=terms {
        term = &term * x / BigRational::from_integer(BigInt::from(n));
        sum += &term;
    }
    sum
}

/// Convert an exact rational to the nearest f64 by way of a 45-significant-digit
/// decimal literal. Rust's float parser rounds such literals correctly, so the
/// only loss is the final rounding to f64.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let negative = r.is_negative();
    let numer = r.numer().abs();
    let denom = r.denom().clone();
    let digits_n = numer.to_string().len() as i64;
    let digits_d = denom.to_string().len() as i64;
    let shift = 45 - (digits_n - digits_d);
    let (quotient, exp10) = if shift >= 0 {
        let scaled = &numer * num::pow::pow(BigInt::from(10u32), shift as usize);
        (scaled / &denom, -shift)
    } else {
        let scaled_denom = &denom * num::pow::pow(BigInt::from(10u32), (-shift) as usize);
        (numer / scaled_denom, -shift)
    };
    let literal = format!("{quotient}e{exp10}");
    let value: f64 = literal.parse().expect("decimal literal always parses");
    if negative {
        -value
    } else {
        value
    }
}

/// |e^{r_pos} - e^{r_neg}| / e^{r_neu} evaluated in exact rational arithmetic
/// at the *exact* binary values of the f64 inputs, then rounded once to f64.
pub fn bias_score_oracle(r_pos: f64, r_neg: f64, r_neu: f64) -> f64 {
    let to_rational = |v: f64| -> BigRational {
        assert!(
            (0.0..=2.0).contains(&v),
            "proportion out of supported range: {v}"
        );
        BigRational::from_float(v).expect("finite f64 is an exact rational")
    };
    let e_pos = exp_rational(&to_rational(r_pos), 40);
    let e_neg = exp_rational(&to_rational(r_neg), 40);
    let e_neu = exp_rational(&to_rational(r_neu), 40);
    let score = (e_pos - e_neg).abs() / e_neu;
    rational_to_f64(&score)
}
