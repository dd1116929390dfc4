//! IEEE-754 binary16 emulation.
//!
//! Values are carried as `f64` everywhere; [`round`] snaps a value onto the
//! binary16 grid with round-to-nearest-even, overflow to infinity and full
//! subnormal support. Converting straight from `f64` avoids the double
//! rounding of an `f64 -> f32 -> f16` chain.

/// Largest finite binary16 value.
pub const MAX: f64 = 65504.0;
/// Smallest positive normal binary16 value, 2^-14.
pub const MIN_POSITIVE: f64 = 6.103515625e-5;
/// Smallest positive subnormal binary16 value, 2^-24.
pub const MIN_SUBNORMAL: f64 = 5.960464477539063e-8;

/// Shift `sig` right by `shift` bits, rounding to nearest, ties to even.
fn shift_rne(sig: u64, shift: u32) -> u64 {
    if shift == 0 {
        return sig;
    }
    if shift >= 64 {
        return 0;
    }
    let q = sig >> shift;
    let rem = sig & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Encode `x` as binary16 bits.
pub fn to_bits(x: f64) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);

    if exp == 0x7ff {
        return if frac == 0 { sign | 0x7c00 } else { sign | 0x7e00 };
    }
    if exp == 0 {
        // f64 subnormals are far below half the smallest binary16 subnormal.
        return sign;
    }
    let e = exp - 1023;
    let sig = frac | (1u64 << 52);

    if e >= -14 {
        let mut h = shift_rne(sig, 42);
        let mut he = e + 15;
        if h == 1 << 11 {
            h = 1 << 10;
            he += 1;
        }
        if he >= 31 {
            return sign | 0x7c00;
        }
        sign | ((he as u16) << 10) | ((h as u16) & 0x3ff)
    } else {
        // value = m * 2^-24 with m = sig * 2^(e - 28)
        let shift = (28 - e) as u32;
        let m = shift_rne(sig, shift);
        // m == 0x400 carries into the smallest normal, which has the same bits.
        sign | (m as u16)
    }
}

/// Decode binary16 bits.
pub fn from_bits(b: u16) -> f64 {
    let sign = if b & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((b >> 10) & 0x1f) as i32;
    let frac = (b & 0x3ff) as f64;
    match exp {
        0 => sign * frac * MIN_SUBNORMAL,
        31 => {
            if frac == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1.0 + frac / 1024.0) * libm::ldexp(1.0, exp - 15),
    }
}

/// Round `x` to the nearest binary16 value.
#[inline]
pub fn round(x: f64) -> f64 {
    from_bits(to_bits(x))
}
