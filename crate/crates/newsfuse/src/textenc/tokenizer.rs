//! Whitespace hashing tokenizer for the toy backbone. Word segmentation
//! proper is delegated to whichever pretrained tokenizer produced a real
//! checkpoint; this one only needs to be deterministic and collision-stable
//! so planted tokens map to fixed ids.

pub const CLS_ID: u32 = 0;

#[derive(Debug, Clone)]
pub struct HashTokenizer {
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

impl HashTokenizer {
    pub fn new(vocab_size: usize, max_seq_len: usize) -> Self {
        assert!(vocab_size > 1);
        assert!(max_seq_len >= 1);
        HashTokenizer {
            vocab_size,
            max_seq_len,
        }
    }

    /// `[CLS]` followed by hashed word ids, truncated to `max_seq_len`
    /// positions (keep-first policy).
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        for word in text.split_whitespace() {
            if ids.len() >= self.max_seq_len {
                break;
            }
            let lower = word.to_lowercase();
            let id = 1 + (fnv1a(lower.as_bytes()) % (self.vocab_size as u64 - 1)) as u32;
            ids.push(id);
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cls_leads_every_sequence() {
        let t = HashTokenizer::new(1024, 16);
        assert_eq!(t.tokenize(""), vec![CLS_ID]);
        assert_eq!(t.tokenize("xin chào")[0], CLS_ID);
    }

    #[test]
    fn truncates_to_max_len() {
        let t = HashTokenizer::new(1024, 4);
        let ids = t.tokenize("a b c d e f g");
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn stable_and_case_folded() {
        let t = HashTokenizer::new(1024, 16);
        assert_eq!(t.tokenize("Tin NÓNG"), t.tokenize("tin nóng"));
        assert_eq!(t.tokenize("sốc"), t.tokenize("sốc"));
        assert!(t.tokenize("sốc")[1] >= 1);
    }
}
