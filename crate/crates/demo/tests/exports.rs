use rtlreason_demo::{compare_scripts, corrective_preview, pass_at_k_table};
use serde_json::Value;

#[test]
fn pass_table() {
    let v: Value = serde_json::from_str(&pass_at_k_table(10, 1)).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert!((rows[4]["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(rows[9]["value"].as_f64().unwrap(), 1.0);
    let bad: Value = serde_json::from_str(&pass_at_k_table(3, 5)).unwrap();
    assert!(bad["error"].is_string());
    let empty: Value = serde_json::from_str(&pass_at_k_table(0, 0)).unwrap();
    assert!(empty["error"].is_string());
}

#[test]
fn jaccard_compare() {
    let a = "module m(input a, output y); assign y = a; endmodule";
    let v: Value = serde_json::from_str(&compare_scripts(a, a, 0.8)).unwrap();
    assert_eq!(v["jaccard"].as_f64().unwrap(), 1.0);
    assert_eq!(v["contaminated"], true);
    let w: Value = serde_json::from_str(&compare_scripts(a, "module q; wire z; endmodule", 0.8)).unwrap();
    assert_eq!(w["contaminated"], false);
}

#[test]
fn preview() {
    let t = "P\n<think>\nA first idea. Wait, second. Wait, third.\n</think>\n<answer>x</answer>";
    let v: Value = serde_json::from_str(&corrective_preview(t, "Rule one.\n# c\n", 1)).unwrap();
    assert_eq!(v["splice_kind"], "at_delimiter");
    assert_eq!(
        v["spliced"].as_str().unwrap(),
        "P\n<think>\nA first idea. Wait, second. Wait, third.\nWait, my reasoning must be incorrect. Let's check the reasoning rules: 1. Rule one. Wait, I did not follow the rules. Let's try again."
    );
    assert_eq!(v["truncated"], true);
    assert_eq!(v["truncated_transcript"].as_str().unwrap(), "P\n<think>\nA first idea. Wait, second. </think>");
    assert_eq!(v["sentence_waits"], 2);
}
