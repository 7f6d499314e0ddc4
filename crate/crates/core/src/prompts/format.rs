//! Float formatting that matches the C/Python conventions used in prompt text.

fn special(v: f64) -> Option<String> {
    if v.is_nan() {
        Some("nan".into())
    } else if v.is_infinite() {
        Some(if v > 0.0 { "inf" } else { "-inf" }.into())
    } else {
        None
    }
}

/// Split Rust's `{:e}` output into sign, digit string and decimal exponent.
fn decompose(sci: &str) -> (bool, String, i32) {
    let (neg, body) = match sci.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, sci),
    };
    let (mant, exp) = body.split_once('e').expect("scientific form");
    (neg, mant.replace('.', ""), exp.parse().expect("exponent"))
}

fn exp_suffix(exp: i32) -> String {
    format!("e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

/// Shortest round-trip decimal in the layout of Python's `repr(float)`.
pub fn format_repr(v: f64) -> String {
    if let Some(s) = special(v) {
        return s;
    }
    let (neg, digits, exp) = decompose(&format!("{v:e}"));
    let sign = if neg { "-" } else { "" };
    if (-4..16).contains(&exp) {
        if exp >= 0 {
            let e = exp as usize;
            let int: String = if digits.len() > e {
                digits[..=e].to_string()
            } else {
                format!("{digits}{}", "0".repeat(e + 1 - digits.len()))
            };
            let frac = if digits.len() > e + 1 { &digits[e + 1..] } else { "0" };
            format!("{sign}{int}.{frac}")
        } else {
            format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
        }
    } else {
        let mant = if digits.len() > 1 {
            format!("{}.{}", &digits[..1], &digits[1..])
        } else {
            digits
        };
        format!("{sign}{mant}{}", exp_suffix(exp))
    }
}

/// C `%.17g`.
pub fn format_g17(v: f64) -> String {
    const P: i32 = 17;
    if let Some(s) = special(v) {
        return s;
    }
    let (_, _, exp) = decompose(&format!("{v:.16e}"));
    if exp >= -4 && exp < P {
        let fixed = format!("{v:.*}", (P - 1 - exp) as usize);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let sci = format!("{v:.16e}");
        let (mant, _) = sci.split_once('e').expect("scientific form");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}{}", exp_suffix(exp))
    }
}
