use regex::Regex;
use std::sync::OnceLock;

/// Source of image dimensions for aspect-ratio features. Unresolvable refs
/// are skipped, never fatal.
pub trait ImageResolver {
    fn dimensions(&self, image_ref: &str) -> Option<(u32, u32)>;
}

/// Resolves nothing; the aspect feature falls back to 0.0.
pub struct NullResolver;

impl ImageResolver for NullResolver {
    fn dimensions(&self, _image_ref: &str) -> Option<(u32, u32)> {
        None
    }
}

/// Reads `WxH` dimension hints embedded in the ref itself (e.g.
/// `img://800x600/p1` or `photo_1024x768.jpg`). Covers synthetic corpora and
/// CDN-style URLs that encode size.
pub struct UriDimensionResolver;

fn dim_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d{2,5})x(\d{2,5})").expect("static regex"))
}

impl ImageResolver for UriDimensionResolver {
    fn dimensions(&self, image_ref: &str) -> Option<(u32, u32)> {
        let caps = dim_pattern().captures(image_ref)?;
        let w: u32 = caps[1].parse().ok()?;
        let h: u32 = caps[2].parse().ok()?;
        if w == 0 || h == 0 {
            return None;
        }
        Some((w, h))
    }
}

/// (image_count, mean width/height over resolvable images, 0.0 when none).
pub fn compute_image_features(
    image_refs: &[String],
    resolver: &dyn ImageResolver,
) -> (usize, f64) {
    let count = image_refs.len();
    let aspects: Vec<f64> = image_refs
        .iter()
        .filter_map(|r| resolver.dimensions(r))
        .map(|(w, h)| f64::from(w) / f64::from(h))
        .collect();
    let mean = if aspects.is_empty() {
        0.0
    } else {
        aspects.iter().sum::<f64>() / aspects.len() as f64
    };
    (count, mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list() {
        assert_eq!(compute_image_features(&[], &UriDimensionResolver), (0, 0.0));
    }

    #[test]
    fn mean_aspect_of_two_images() {
        let refs = vec!["img://800x600/a".to_string(), "img://600x600/b".to_string()];
        let (count, aspect) = compute_image_features(&refs, &UriDimensionResolver);
        assert_eq!(count, 2);
        assert!((aspect - (800.0 / 600.0 + 1.0) / 2.0).abs() < 1e-9);
        assert!((aspect - 7.0 / 6.0).abs() < 1e-4);
    }

    #[test]
    fn unresolvable_refs_keep_count_but_zero_aspect() {
        let refs = vec!["a.jpg".to_string(), "b.jpg".to_string(), "c.jpg".to_string()];
        assert_eq!(
            compute_image_features(&refs, &UriDimensionResolver),
            (3, 0.0)
        );
        assert_eq!(compute_image_features(&refs, &NullResolver), (3, 0.0));
    }

    #[test]
    fn zero_dimension_is_unresolvable() {
        assert_eq!(UriDimensionResolver.dimensions("img://00x600/a"), None);
    }
}
