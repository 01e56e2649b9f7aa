use vpsn_wasm::{decompose_value, evaluate_value, fusion_heatmap_value};

const DIFF: &str = "\
--- a/src/auth.c
+++ b/src/auth.c
@@ -10,3 +10,4 @@ int check(char *buf)
 int n = len(buf);
-memcpy(dst, buf, n);
+if (n > MAX) return -1;
+memcpy(dst, buf, n);
";

#[test]
fn decompose_lists_five_variants() {
    let v = decompose_value("fix overflow in check", DIFF).unwrap();
    assert_eq!(v["added"].as_array().unwrap().len(), 2);
    assert_eq!(v["deleted"][0], "memcpy(dst, buf, n);");
    assert_eq!(v["unchanged"][0], "int n = len(buf);");
    let variants = v["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 5);
    let message_only = variants.iter().find(|x| x["code_text"] == "").unwrap();
    assert_eq!(message_only["message_text"], "fix overflow in check");
}

#[test]
fn decompose_rejects_malformed_hunk() {
    assert!(decompose_value("m", "@@ -x +1 @@\n+a\n").is_err());
}

#[test]
fn heatmap_rows_are_distributions_over_code_tokens() {
    let v = fusion_heatmap_value("fix overflow in check", DIFF, 2, 7).unwrap();
    let text = v["text_tokens"].as_array().unwrap().len();
    let code = v["code_tokens"].as_array().unwrap().len();
    let rows = v["weights"].as_array().unwrap();
    assert_eq!(rows.len(), text);
    for row in rows {
        let row = row.as_array().unwrap();
        assert_eq!(row.len(), code);
        let sum: f64 = row.iter().map(|w| w.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5, "{sum}");
    }
    assert_eq!(v, fusion_heatmap_value("fix overflow in check", DIFF, 2, 7).unwrap());
    assert_ne!(v["weights"], fusion_heatmap_value("fix overflow in check", DIFF, 2, 8).unwrap()["weights"]);
}

#[test]
fn evaluate_combines_rouge_auc_and_explanation() {
    let v = evaluate_value(
        "buffer overflow",
        "heap buffer overflow",
        "0.9, 0.2, 0.6",
        "1 0 1",
        r#"{"vulnerability_type": "buffer overflow"}"#,
    )
    .unwrap();
    assert_eq!(v["rouge"]["rouge_1"]["precision"], 100.0);
    assert_eq!(v["auc"], 1.0);
    assert!(v["explanation"].as_str().unwrap().contains("buffer overflow"));

    let empty = evaluate_value("", "", "", "", "").unwrap();
    assert_eq!(empty, serde_json::json!({}));
    assert!(evaluate_value("", "", "0.5", "2", "").is_err());
    assert!(evaluate_value("", "", "x", "1", "").is_err());
}
