/// Boolean `queries x keys` attention mask stored as per-row lists of allowed keys.
///
/// `true` means the query may attend to the key. Attention cost is proportional
/// to the number of allowed entries, not to `queries * keys`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n_queries: usize,
    n_keys: usize,
    offsets: Vec<usize>,
    keys: Vec<u32>,
}

impl AttentionMask {
    /// Build from per-query allowed key lists (each sorted ascending, in range).
    pub fn from_rows(n_keys: usize, rows: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0] < w[1]));
            debug_assert!(row.iter().all(|&k| (k as usize) < n_keys));
            keys.extend(row);
            offsets.push(keys.len());
        }
        Self { n_queries: offsets.len() - 1, n_keys, offsets, keys }
    }

    pub fn from_dense(dense: &[Vec<bool>], n_keys: usize) -> Self {
        Self::from_rows(
            n_keys,
            dense.iter().map(|r| {
                assert_eq!(r.len(), n_keys);
                r.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j as u32).collect()
            }),
        )
    }

    pub fn full(n_queries: usize, n_keys: usize) -> Self {
        Self::from_rows(n_keys, (0..n_queries).map(|_| (0..n_keys as u32).collect()))
    }

    /// Lower-triangular mask over a single sequence.
    pub fn causal(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| (0..=i as u32).collect()))
    }

    /// Mask for a padded batch flattened to `batch * q_width` query rows and
    /// `batch * k_width` key rows. Queries see only their own sentence's real
    /// keys; padding queries see nothing. With `causal`, query `t` sees keys `<= t`.
    pub fn batched(q_lens: &[usize], q_width: usize, k_lens: &[usize], k_width: usize, causal: bool) -> Self {
        assert_eq!(q_lens.len(), k_lens.len());
        let mut rows = Vec::with_capacity(q_lens.len() * q_width);
        for (b, (&ql, &kl)) in q_lens.iter().zip(k_lens).enumerate() {
            let base = (b * k_width) as u32;
            for t in 0..q_width {
                if t >= ql {
                    rows.push(Vec::new());
                    continue;
                }
                let end = if causal { kl.min(t + 1) } else { kl };
                rows.push((base..base + end as u32).collect());
            }
        }
        Self::from_rows(q_lens.len() * k_width, rows)
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    /// Allowed key indices for query `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.keys[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&(j as u32)).is_ok()
    }

    /// Total number of allowed (query, key) pairs.
    pub fn nnz(&self) -> usize {
        self.keys.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.n_queries)
            .map(|i| {
                let mut r = vec![false; self.n_keys];
                for &k in self.row(i) {
                    r[k as usize] = true;
                }
                r
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip() {
        let dense = vec![vec![true, false, true], vec![false, false, false]];
        let m = AttentionMask::from_dense(&dense, 3);
        assert_eq!(m.to_dense(), dense);
        assert_eq!(m.nnz(), 2);
        assert!(m.allowed(0, 2));
        assert!(!m.allowed(1, 0));
    }

    #[test]
    fn batched_causal_respects_lengths() {
        let m = AttentionMask::batched(&[2, 3], 3, &[2, 3], 3, true);
        assert_eq!(m.row(0), &[0]);
        assert_eq!(m.row(1), &[0, 1]);
        assert!(m.row(2).is_empty());
        assert_eq!(m.row(5), &[3, 4, 5]);
    }
}
