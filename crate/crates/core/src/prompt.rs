//! Inference prompt layout.

const HEADER: &str = "Below are some examples";
const FENCE: &str = "---";
const FOOTER: &str = "Based on the above instruction and examples, solve the following problem.";

/// Renders the few-shot prompt. Each demo is `input\noutput`; demos are
/// separated by a blank line and kept in the given order. No trailing newline.
pub fn assemble_prompt<S: AsRef<str>>(task: &str, demos: &[(S, S)], question: &str) -> String {
    let block = demos
        .iter()
        .map(|(i, o)| format!("{}\n{}", i.as_ref(), o.as_ref()))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!("{task}\n{HEADER}\n\n{FENCE}\n\n{block}\n\n{FENCE}\n\n{FOOTER}\n{question}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_demos_leaves_empty_block() {
        let p = assemble_prompt::<&str>("T", &[], "Q");
        assert_eq!(
            p,
            "T\nBelow are some examples\n\n---\n\n\n\n---\n\nBased on the above instruction and examples, solve the following problem.\nQ"
        );
    }

    #[test]
    fn three_demos_in_order() {
        let demos = [("i1", "o1"), ("i2", "o2"), ("i3", "o3")];
        let p = assemble_prompt("T", &demos, "why?");
        assert_eq!(p.matches("---").count(), 2);
        assert!(p.contains("i1\no1\n\ni2\no2\n\ni3\no3"));
        assert!(p.ends_with("solve the following problem.\nwhy?"));
    }
}
