//! Seeded toy corpus with the shape of real dependency-alert data: patch
//! commits carrying all four aspects, and ordinary commits from the same
//! repositories.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{AspectSet, CommitRecord, Label};

struct Template {
    kind: &'static str,
    root_cause: &'static str,
    vector: &'static str,
    impact: &'static str,
    message: &'static str,
    removed: &'static str,
    added: &'static str,
}

const TEMPLATES: &[Template] = &[
    Template {
        kind: "cross-site scripting vulnerability",
        root_cause: "improper validation of user-supplied input",
        vector: "sending a specially-crafted request",
        impact: "steal the victim's cookie-based authentication credentials",
        message: "escape html output in template renderer",
        removed: "out.write(value)",
        added: "out.write(escape_html(value))",
    },
    Template {
        kind: "sql injection vulnerability",
        root_cause: "unsanitized query parameters",
        vector: "the search parameter",
        impact: "read arbitrary database records",
        message: "use bound parameters for search query",
        removed: "db.query(\"select * from t where name = '\" + name + \"'\")",
        added: "db.query(\"select * from t where name = ?\", [name])",
    },
    Template {
        kind: "buffer overflow",
        root_cause: "missing length check before copy",
        vector: "a long header value",
        impact: "execute arbitrary code",
        message: "check header length before memcpy",
        removed: "memcpy(buf, src, len);",
        added: "if (len > sizeof(buf)) return -1; memcpy(buf, src, len);",
    },
    Template {
        kind: "path traversal vulnerability",
        root_cause: "unnormalized file paths",
        vector: "dot dot sequences in the archive entry name",
        impact: "overwrite arbitrary files",
        message: "reject archive entries outside target dir",
        removed: "let dest = root.join(entry.name);",
        added: "let dest = safe_join(root, entry.name)?;",
    },
    Template {
        kind: "denial of service vulnerability",
        root_cause: "unbounded recursion while parsing nested input",
        vector: "deeply nested json documents",
        impact: "crash the server",
        message: "limit nesting depth in parser",
        removed: "return parse_value(reader)",
        added: "if depth > MAX_DEPTH { return Err(TooDeep) } return parse_value(reader, depth + 1)",
    },
    Template {
        kind: "prototype pollution vulnerability",
        root_cause: "unchecked object keys during merge",
        vector: "a __proto__ key in merged objects",
        impact: "modify application behavior",
        message: "skip proto keys when merging objects",
        removed: "target[key] = source[key];",
        added: "if (key === '__proto__') continue; target[key] = source[key];",
    },
    Template {
        kind: "server-side request forgery",
        root_cause: "unrestricted outbound url fetching",
        vector: "a crafted webhook url",
        impact: "access internal services",
        message: "validate webhook host against allowlist",
        removed: "fetch(url)",
        added: "if (!allowed(url.host)) throw new Error('blocked'); fetch(url)",
    },
    Template {
        kind: "xml external entity vulnerability",
        root_cause: "external entity resolution enabled by default",
        vector: "an uploaded xml file",
        impact: "disclose local files",
        message: "disable external entities in xml parser",
        removed: "factory = DocumentBuilderFactory.newInstance();",
        added: "factory = DocumentBuilderFactory.newInstance();\nfactory.setFeature(DISALLOW_DOCTYPE, true);",
    },
];

/// Number of distinct vulnerability templates; patches cycle through them.
pub const TEMPLATE_COUNT: usize = TEMPLATES.len();

const CHORES: &[(&str, &str, &str)] = &[
    ("update readme badges", "# project", "# project [![ci]]"),
    ("bump version to next release", "version = \"1.2.0\"", "version = \"1.3.0\""),
    ("rename helper for clarity", "fn do_it(x)", "fn apply_transform(x)"),
    ("add unit test for formatter", "// todo", "assert_eq!(format(1), \"1\");"),
    ("refactor logging setup", "log.init()", "logging::init(config.level)"),
    ("fix typo in error message", "\"recieved\"", "\"received\""),
    ("reformat imports", "import a,b", "import a\nimport b"),
];

const LANGUAGES: &[&str] = &["JavaScript", "Python", "Java", "Go", "PHP", "Ruby", "C"];

fn diff_text(file: &str, context: &str, removed: &str, added: &str) -> String {
    let added_lines: Vec<&str> = added.lines().collect();
    let mut s = format!(
        "diff --git a/{file} b/{file}\n--- a/{file}\n+++ b/{file}\n@@ -1,3 +1,{} @@\n {context}\n-{removed}\n",
        2 + added_lines.len()
    );
    for line in &added_lines {
        s.push('+');
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(" end\n");
    s
}

/// `records` commits spread over `repos` repositories, about a quarter of
/// them vulnerability patches. Every repository gets at least one patch
/// when `records >= 4 * repos`.
pub fn synthetic_corpus(records: usize, repos: usize, seed: u64) -> Vec<CommitRecord> {
    let repos = repos.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records);
    for i in 0..records {
        let repo_idx = i % repos;
        let repo = format!("org{}/lib-{repo_idx}", repo_idx % 7);
        let language = LANGUAGES[repo_idx % LANGUAGES.len()];
        let positive = (i / repos).is_multiple_of(4);
        let context = format!("fn handler_{}()", rng.gen_range(0..50));
        let file = format!("src/module_{}.x", rng.gen_range(0..20));
        let record = if positive {
            let t = &TEMPLATES[(i / repos / 4 + repo_idx) % TEMPLATES.len()];
            let message = format!("{} (#{})", t.message, rng.gen_range(100..999));
            let diff = diff_text(&file, &context, t.removed, t.added);
            CommitRecord::new(format!("c{i:05}"), repo, message, diff, Label::VulnerablePatch)
                .expect("synthetic diff parses")
                .with_aspects(AspectSet {
                    vulnerability_type: Some(t.kind.into()),
                    root_cause: Some(t.root_cause.into()),
                    attack_vector: Some(t.vector.into()),
                    impact: Some(t.impact.into()),
                })
        } else {
            let (msg, removed, added) = CHORES.choose(&mut rng).expect("chores");
            let diff = diff_text(&file, &context, removed, added);
            CommitRecord::new(format!("c{i:05}"), repo, msg.to_string(), diff, Label::NonPatch)
                .expect("synthetic diff parses")
        };
        out.push(record.with_language(language));
    }
    out
}
