/// Span `(s, e)` with `s ≤ e < s + max_len` maximising `p_start[s] · p_end[e]`.
/// Ties go to the smallest `s`, then the smallest `e`.
pub fn best_span(p_start: &[f64], p_end: &[f64], max_len: usize) -> (usize, usize) {
    assert_eq!(p_start.len(), p_end.len(), "distribution lengths differ");
    assert!(!p_start.is_empty(), "empty distributions");
    let max_len = max_len.max(1);
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for (s, &ps) in p_start.iter().enumerate() {
        let stop = p_end.len().min(s + max_len);
        for (e, &pe) in p_end.iter().enumerate().take(stop).skip(s) {
            let score = ps * pe;
            if score > best_score {
                best_score = score;
                best = (s, e);
            }
        }
    }
    best
}
