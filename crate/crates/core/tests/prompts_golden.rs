use std::path::PathBuf;

use evoharness_core::prompts::{parse_code_block, parse_diff_and_apply, render_template, PromptContext, TemplateKind};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn context() -> PromptContext {
    let text = std::fs::read_to_string(fixtures().join("golden/context.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn templates_match_golden_files() {
    let ctx = context();
    for kind in TemplateKind::ALL {
        let expected = std::fs::read_to_string(fixtures().join(format!("golden/{}.txt", kind.name()))).unwrap();
        let got = render_template(kind, &ctx).unwrap();
        assert!(got == expected, "{} differs:\n--- got\n{got}\n--- expected\n{expected}", kind.name());
    }
}

#[test]
fn two_block_edit_matches_manual_edit() {
    let parent = std::fs::read_to_string(fixtures().join("diff/parent.py")).unwrap();
    let response = std::fs::read_to_string(fixtures().join("diff/response.txt")).unwrap();
    let expected = std::fs::read_to_string(fixtures().join("diff/expected.py")).unwrap();
    assert_eq!(parse_diff_and_apply(&parent, &response).unwrap(), expected);
}

#[test]
fn extracted_code_from_a_realistic_reply() {
    let reply = "I'll sort by ratio.\n\n```python\nimport math\n\ndef solve(jobs):\n    return sorted(range(len(jobs)))\n```\n";
    assert_eq!(
        parse_code_block(reply).unwrap(),
        "import math\n\ndef solve(jobs):\n    return sorted(range(len(jobs)))"
    );
}
