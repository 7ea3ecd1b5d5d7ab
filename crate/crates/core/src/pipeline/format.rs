/// Formats `x` with two decimals, rounding halves away from zero.
///
/// Rounding works on the shortest decimal representation of `x`, so `46.065`
/// becomes `46.07` even though its binary value sits just below the half.
pub fn round_half_up(x: f64) -> String {
    if !x.is_finite() {
        return "-".to_string();
    }
    let s = format!("{:.12}", x.abs());
    let (int, frac) = s.split_once('.').expect("fixed format has a point");
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().take(2)).map(|b| b - b'0').collect();
    if frac.as_bytes()[2] >= b'5' {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let text: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let body = format!("{}.{}", &text[..split], &text[split..]);
    if x < 0.0 && body.bytes().any(|b| b.is_ascii_digit() && b != b'0') {
        format!("-{body}")
    } else {
        body
    }
}

/// p values: fixed notation down to 0.001, three significant digits below.
pub fn format_p(p: f64) -> String {
    if !p.is_finite() {
        "-".to_string()
    } else if p >= 0.001 {
        format!("{p:.6}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{p:.2e}")
    }
}
