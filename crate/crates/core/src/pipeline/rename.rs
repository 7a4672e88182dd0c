use std::sync::LazyLock;

use regex::Regex;

use crate::prompts::ParseError;

fn decl_re() -> &'static Regex {
    static RE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"(?m)^([ \t]*(?:@\[[^\]]*\][ \t]*)?(?:(?:private|protected)[ \t]+)?)(theorem|lemma|example)\b([ \t]+([^\s(\[{:⦃]+))?").unwrap()
    });
    &RE
}

/// Lean identifier derived from a problem id and statement ordinal.
pub fn canonical_name(problem_id: &str, ordinal: usize) -> String {
    let mut base: String = problem_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if base.is_empty() || base.starts_with(|c: char| c.is_ascii_digit()) {
        base.insert_str(0, "p_");
    }
    format!("{base}_{ordinal}")
}

/// Replaces the first declaration's name with [`canonical_name`]. An
/// anonymous `example` becomes a named `theorem`. Everything else is left
/// byte-for-byte unchanged.
pub fn canonical_rename(lean: &str, problem_id: &str, ordinal: usize) -> Result<String, ParseError> {
    let re = decl_re();
    let caps = re.captures(lean).ok_or(ParseError::NoTheoremFound)?;
    let name = canonical_name(problem_id, ordinal);
    let kw = caps.get(2).unwrap();
    let mut out = String::with_capacity(lean.len() + name.len());
    if kw.as_str() == "example" {
        out.push_str(&lean[..kw.start()]);
        out.push_str("theorem ");
        out.push_str(&name);
        out.push_str(&lean[kw.end()..]);
    } else {
        let Some(old) = caps.get(4) else {
            return Err(ParseError::NoTheoremFound);
        };
        out.push_str(&lean[..old.start()]);
        out.push_str(&name);
        out.push_str(&lean[old.end()..]);
    }
    Ok(out)
}

/// Dedup key: declaration name blanked, whitespace runs collapsed.
pub fn normalized_key(lean: &str) -> String {
    let renamed = canonical_rename(lean, "x", 0).unwrap_or_else(|_| lean.to_string());
    renamed.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renames_theorem() {
        assert_eq!(
            canonical_rename("theorem test : 1=1 := by sorry", "p7", 2).unwrap(),
            "theorem p7_2 : 1=1 := by sorry"
        );
    }

    #[test]
    fn preserves_unicode_body() {
        let src = "theorem test (x₁ x₂ : ℝ) (h₀ : x₁ ≠ x₂) : x₁ - x₂ ≠ 0 := by sorry";
        let out = canonical_rename(src, "imo-1990-3", 1).unwrap();
        assert_eq!(
            out,
            "theorem imo_1990_3_1 (x₁ x₂ : ℝ) (h₀ : x₁ ≠ x₂) : x₁ - x₂ ≠ 0 := by sorry"
        );
    }

    #[test]
    fn idempotent() {
        let once = canonical_rename("lemma foo.bar (n : ℕ) : n = n := by sorry", "p7", 2).unwrap();
        assert_eq!(canonical_rename(&once, "p7", 2).unwrap(), once);
    }

    #[test]
    fn names_examples_and_keeps_preamble() {
        assert_eq!(
            canonical_rename("open Real\n\nexample : π > 3 := by sorry", "p1", 1).unwrap(),
            "open Real\n\ntheorem p1_1 : π > 3 := by sorry"
        );
        assert_eq!(canonical_name("12", 1), "p_12_1");
    }

    #[test]
    fn no_declaration() {
        assert_eq!(canonical_rename("def f := 1", "p", 1), Err(ParseError::NoTheoremFound));
    }

    #[test]
    fn key_ignores_name_and_spacing() {
        assert_eq!(
            normalized_key("theorem a  (x : ℕ) :\n x = x := by sorry"),
            normalized_key("theorem b (x : ℕ) : x = x := by sorry")
        );
    }
}
