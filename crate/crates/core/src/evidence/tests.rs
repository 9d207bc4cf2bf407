use std::collections::BTreeMap;

use super::*;
use crate::llm_gateway::MockGateway;
use crate::profiler::profile_column;
use crate::router::{routing_user_prompt, ROUTING_SYSTEM_PROMPT};
use crate::schema_knowledge::{
    ColumnKnowledge, ColumnProfile, ColumnSemantics, SchemaKnowledge, TableKnowledge, Timestamp,
};
use crate::values::SqlValue;

fn column(name: &str, ty: &str, samples: &[SqlValue]) -> ColumnKnowledge {
    ColumnKnowledge {
        name: name.into(),
        declared_type: ty.into(),
        profile: if samples.is_empty() {
            ColumnProfile::empty()
        } else {
            profile_column(samples)
        },
        semantics: ColumnSemantics::default(),
    }
}

fn table(name: &str, columns: Vec<ColumnKnowledge>) -> TableKnowledge {
    let cols: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    TableKnowledge {
        name: name.into(),
        simplified_ddl: format!("CREATE TABLE {} ({})", name, cols.join(", ")),
        row_count: 0,
        columns,
        sample_rows: Vec::new(),
    }
}

/// customer -- order -- shipment chain, plus an isolated audit table.
fn chain_knowledge() -> SchemaKnowledge {
    let mut sk = SchemaKnowledge::new("shop", Timestamp::epoch());
    sk.tables = vec![
        table(
            "customer",
            vec![
                column("customer_id", "INTEGER", &[SqlValue::Integer(1)]),
                column("name", "TEXT", &[]),
            ],
        ),
        table(
            "order",
            vec![
                column("order_id", "INTEGER", &[SqlValue::Integer(7)]),
                column("customer_id", "INTEGER", &[SqlValue::Integer(1)]),
            ],
        ),
        table(
            "shipment",
            vec![
                column("shipment_id", "INTEGER", &[SqlValue::Integer(3)]),
                column("order_id", "INTEGER", &[SqlValue::Integer(7)]),
            ],
        ),
        table("audit", vec![column("entry", "TEXT", &[])]),
    ];
    sk.fk_edges = vec![
        crate::schema_knowledge::ForeignKeyEdge::declared(
            ColumnRef::new("order", "customer_id"),
            ColumnRef::new("customer", "customer_id"),
        ),
        crate::schema_knowledge::ForeignKeyEdge::declared(
            ColumnRef::new("shipment", "order_id"),
            ColumnRef::new("order", "order_id"),
        ),
    ];
    sk.validate().unwrap();
    sk
}

fn sales_knowledge() -> SchemaKnowledge {
    let mut sk = SchemaKnowledge::new("sales", Timestamp::epoch());
    let year_samples: Vec<SqlValue> = (2018..=2023).map(SqlValue::Integer).collect();
    let mut year = column("year", "INTEGER", &year_samples);
    year.semantics.description = "the sales year".into();
    year.semantics.time_granularity_hint = Some("year".into());
    year.semantics.aliases = vec!["fiscal year".into()];

    let amount_samples: Vec<SqlValue> = [18.0, 40.0, 90.0]
        .iter()
        .map(|v| SqlValue::Real(*v))
        .collect();
    let mut amount = column("amount", "REAL", &amount_samples);
    amount.semantics.aliases = vec!["sales amount".into()];

    let mut total = column("total", "REAL", &amount_samples);
    total.semantics.aliases = vec!["amount".into()];

    let age_samples: Vec<SqlValue> = [18, 30, 90].iter().map(|v| SqlValue::Integer(*v)).collect();
    let age = column("age", "INTEGER", &age_samples);

    sk.tables = vec![table("orders", vec![year, amount, total, age])];
    sk.validate().unwrap();
    sk
}

/// Table 3 #49 style fixture: a DOC code column whose glossary carries the
/// district names.
fn schools_knowledge() -> SchemaKnowledge {
    let mut sk = SchemaKnowledge::new("california_schools", Timestamp::epoch());
    let doc_samples = vec![
        SqlValue::Text("52".into()),
        SqlValue::Text("54".into()),
        SqlValue::Text("52".into()),
    ];
    let mut doc = column("DOC", "TEXT", &doc_samples);
    doc.semantics.description = "district ownership code".into();
    doc.semantics.aliases = vec!["school district".into()];
    doc.semantics
        .enum_glossary
        .insert("52".into(), "Elementary School District".into());
    doc.semantics
        .enum_glossary
        .insert("54".into(), "Unified School District".into());
    let county = column(
        "County",
        "TEXT",
        &[SqlValue::Text("Orange".into()), SqlValue::Text("Monterey".into())],
    );
    sk.tables = vec![table("schools", vec![column("CDSCode", "TEXT", &[]), county, doc])];
    sk.validate().unwrap();
    sk
}

const QUESTION_49: &str = "Compute ratio of Unified School District vs Elementary School \
                           District schools in Orange County";

// --- join paths -----------------------------------------------------------

/// Independent path finder: enumerate all simple paths, then apply the same
/// (length, inferred-count, lexicographic) preference.
fn brute_force_path(sk: &SchemaKnowledge, from: &str, to: &str) -> Option<JoinPath> {
    fn explore(
        sk: &SchemaKnowledge,
        at: &str,
        goal: &str,
        tables: &mut Vec<String>,
        edges: &mut Vec<crate::schema_knowledge::ForeignKeyEdge>,
        found: &mut Vec<JoinPath>,
    ) {
        if at == goal && !edges.is_empty() {
            found.push(JoinPath {
                tables: tables.clone(),
                edges: edges.clone(),
            });
            return;
        }
        for edge in &sk.fk_edges {
            let next = if edge.from.table == at {
                edge.to.table.clone()
            } else if edge.to.table == at {
                edge.from.table.clone()
            } else {
                continue;
            };
            if tables.contains(&next) {
                continue;
            }
            tables.push(next.clone());
            edges.push(edge.clone());
            explore(sk, &next, goal, tables, edges, found);
            edges.pop();
            tables.pop();
        }
    }
    let mut found = Vec::new();
    explore(
        sk,
        from,
        to,
        &mut vec![from.to_string()],
        &mut Vec::new(),
        &mut found,
    );
    let min_len = found.iter().map(|p| p.edges.len()).min()?;
    found.retain(|p| p.edges.len() == min_len);
    // Same preference law, computed from scratch: fewest inferred edges,
    // then lexicographic table sequence, then edge endpoints.
    found.into_iter().min_by_key(|p| {
        let inferred = p
            .edges
            .iter()
            .filter(|e| e.source == crate::schema_knowledge::EdgeSource::Inferred)
            .count();
        let edge_keys: Vec<String> = p
            .edges
            .iter()
            .map(|e| format!("{}|{}", e.from, e.to))
            .collect();
        (inferred, p.tables.clone(), edge_keys)
    })
}

#[test]
fn two_hop_chain_resolves_through_the_middle_table() {
    let sk = chain_knowledge();
    let tables: std::collections::BTreeSet<String> =
        ["customer", "shipment"].iter().map(|s| s.to_string()).collect();
    let search = find_join_paths(&sk, &tables).unwrap();
    assert!(search.unreachable.is_empty());
    assert_eq!(search.paths.len(), 1);
    let path = &search.paths[0];
    assert_eq!(path.tables, vec!["customer", "order", "shipment"]);
    assert_eq!(path.edges.len(), 2);
    assert_eq!(
        Some(path.clone()),
        brute_force_path(&sk, "customer", "shipment")
    );
}

#[test]
fn single_edge_pair_uses_it() {
    let sk = chain_knowledge();
    let tables: std::collections::BTreeSet<String> =
        ["customer", "order"].iter().map(|s| s.to_string()).collect();
    let search = find_join_paths(&sk, &tables).unwrap();
    assert_eq!(search.paths.len(), 1);
    assert_eq!(search.paths[0].edges.len(), 1);
}

#[test]
fn disconnected_tables_are_reported_unreachable() {
    let sk = chain_knowledge();
    let tables: std::collections::BTreeSet<String> =
        ["customer", "audit"].iter().map(|s| s.to_string()).collect();
    let search = find_join_paths(&sk, &tables).unwrap();
    assert!(search.paths.is_empty());
    assert_eq!(
        search.unreachable,
        vec![("audit".to_string(), "customer".to_string())]
    );
}

#[test]
fn unknown_table_is_an_error() {
    let sk = chain_knowledge();
    let tables: std::collections::BTreeSet<String> =
        ["customer", "ghost"].iter().map(|s| s.to_string()).collect();
    assert!(matches!(
        find_join_paths(&sk, &tables),
        Err(EvidenceError::UnknownTable(_))
    ));
}

#[test]
fn declared_edge_beats_parallel_inferred_edge() {
    let mut sk = chain_knowledge();
    sk.fk_edges.push(crate::schema_knowledge::ForeignKeyEdge::inferred(
        ColumnRef::new("customer", "customer_id"),
        ColumnRef::new("order", "order_id"),
        0.9,
    ));
    let path = best_join_path(&sk, "customer", "order").unwrap();
    assert_eq!(path.edges.len(), 1);
    assert_eq!(
        path.edges[0].source,
        crate::schema_knowledge::EdgeSource::Declared
    );
    assert_eq!(Some(path), brute_force_path(&sk, "customer", "order"));
}

#[test]
fn random_graphs_match_brute_force() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        let n = rng.gen_range(2..=6);
        let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let mut sk = SchemaKnowledge::new("g", Timestamp::epoch());
        sk.tables = names
            .iter()
            .map(|name| table(name, vec![column("id", "INTEGER", &[SqlValue::Integer(1)])]))
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.45) {
                    let edge = if rng.gen_bool(0.7) {
                        crate::schema_knowledge::ForeignKeyEdge::declared(
                            ColumnRef::new(&names[i], "id"),
                            ColumnRef::new(&names[j], "id"),
                        )
                    } else {
                        crate::schema_knowledge::ForeignKeyEdge::inferred(
                            ColumnRef::new(&names[i], "id"),
                            ColumnRef::new(&names[j], "id"),
                            0.9,
                        )
                    };
                    sk.fk_edges.push(edge);
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let got = best_join_path(&sk, &names[i], &names[j]);
                let want = brute_force_path(&sk, &names[i], &names[j]);
                assert_eq!(got, want, "pair {} {}", names[i], names[j]);
            }
        }
    }
}

// --- schema consistency ----------------------------------------------------

#[test]
fn schema_consistency_renders_the_join_sentence() {
    let sk = chain_knowledge();
    let path = best_join_path(&sk, "customer", "order").unwrap();
    let items = gen_schema_consistency(&[path]);
    assert_eq!(items.len(), 1);
    assert!(items[0]
        .text
        .starts_with("Table customer is linked to order via customer_id"));
    assert!(items[0].grounded_in(&sk));
}

#[test]
fn no_paths_no_items() {
    assert!(gen_schema_consistency(&[]).is_empty());
}

#[test]
fn two_hop_item_names_both_columns_in_order() {
    let sk = chain_knowledge();
    let path = best_join_path(&sk, "customer", "shipment").unwrap();
    let items = gen_schema_consistency(&[path]);
    let text = &items[0].text;
    assert_eq!(
        text,
        "Table customer is linked to order via customer_id, then to shipment via order_id."
    );
}

// --- semantic constraints ---------------------------------------------------

#[test]
fn year_constraint_matches_the_reference_sentence() {
    let sk = sales_knowledge();
    let (items, warnings) =
        gen_semantic_constraint("sales after 2020", &sk, &MockGateway::new());
    assert!(warnings.is_empty());
    assert_eq!(items.len(), 1);
    assert_eq!(
        items[0].text,
        "Column year denotes the sales year; records with year > 2020 correspond to 2021 and later."
    );
    assert_eq!(items[0].referenced, vec![ColumnRef::new("orders", "year")]);
}

#[test]
fn no_mention_no_constraints() {
    let sk = sales_knowledge();
    let (items, warnings) =
        gen_semantic_constraint("list all customers", &sk, &MockGateway::new());
    assert!(items.is_empty());
    assert!(warnings.is_empty());
}

#[test]
fn unmatched_range_mention_records_a_warning() {
    let sk = sales_knowledge();
    let (items, warnings) =
        gen_semantic_constraint("entries above 123456", &sk, &MockGateway::new());
    assert!(items.is_empty());
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("above 123456"));
}

#[test]
fn gateway_can_rephrase_the_stub() {
    let sk = sales_knowledge();
    let mut mock = MockGateway::new();
    let stub = "Column year denotes the sales year; records with year > 2020 correspond to \
                2021 and later.";
    mock.script(CONSTRAINT_SYSTEM_PROMPT, stub, "Year values above 2020 mean 2021 onward.");
    let (items, _) = gen_semantic_constraint("sales after 2020", &sk, &mock);
    assert_eq!(items[0].text, "Year values above 2020 mean 2021 onward.");
}

#[test]
fn explicit_column_mention_with_range() {
    let sk = sales_knowledge();
    let (items, _) =
        gen_semantic_constraint("orders with amount more than 50", &sk, &MockGateway::new());
    assert_eq!(items.len(), 1);
    assert!(items[0].text.contains("amount > 50"));
    assert!(items[0].text.contains("18.0 to 90.0"), "{}", items[0].text);
}

// --- numeric templates -------------------------------------------------------

#[test]
fn average_age_template_names_the_range() {
    let sk = sales_knowledge();
    let items = gen_numeric_template("average age of buyers", &sk);
    assert_eq!(items.len(), 1);
    let item = &items[0];
    assert_eq!(item.referenced, vec![ColumnRef::new("orders", "age")]);
    assert!(item.text.contains("average"));
    assert!(item.text.contains("18.0") && item.text.contains("90.0"), "{}", item.text);
}

#[test]
fn all_matched_numeric_columns_are_referenced() {
    let sk = sales_knowledge();
    let items = gen_numeric_template("total amount and age per year", &sk);
    assert_eq!(items.len(), 1);
    let refs = &items[0].referenced;
    assert!(refs.contains(&ColumnRef::new("orders", "amount")));
    assert!(refs.contains(&ColumnRef::new("orders", "age")));
}

#[test]
fn no_cue_or_no_candidates_means_no_template() {
    let sk = sales_knowledge();
    assert!(gen_numeric_template("list the names", &sk).is_empty());
    assert!(gen_numeric_template("ratio of things unrelated", &sk).is_empty());
}

// --- enum dictionaries -------------------------------------------------------

#[test]
fn doc_dictionary_lists_both_mappings_verbatim() {
    let sk = schools_knowledge();
    let items = gen_enum_dictionary(QUESTION_49, &sk);
    assert_eq!(items.len(), 1);
    let text = &items[0].text;
    assert!(text.contains("52 = Elementary School District"), "{text}");
    assert!(text.contains("54 = Unified School District"), "{text}");
    assert_eq!(items[0].referenced, vec![ColumnRef::new("schools", "DOC")]);
}

#[test]
fn enumeration_without_overlap_stays_silent() {
    let sk = schools_knowledge();
    assert!(gen_enum_dictionary("how many schools are there", &sk).is_empty());
}

#[test]
fn glossary_label_enables_code_lookup() {
    let mut sk = SchemaKnowledge::new("crm", Timestamp::epoch());
    let samples = vec![
        SqlValue::Text("F".into()),
        SqlValue::Text("M".into()),
        SqlValue::Text("F".into()),
    ];
    let mut gender = column("gender", "TEXT", &samples);
    gender.semantics.enum_glossary.insert("F".into(), "female".into());
    gender.semantics.enum_glossary.insert("M".into(), "male".into());
    sk.tables = vec![table("customer", vec![gender])];
    sk.validate().unwrap();
    let items = gen_enum_dictionary("how many female customers", &sk);
    assert_eq!(items.len(), 1);
    assert!(items[0].text.contains("F = female"));
}

// --- alias rewriting ---------------------------------------------------------

#[test]
fn alias_rewrite_substitutes_canonical_column_name() {
    let sk = sales_knowledge();
    let (rewritten, items) = gen_alias_rewrite("total sales per fiscal year", &sk);
    assert_eq!(rewritten, "total sales per year");
    assert_eq!(items.len(), 1);
    assert!(items[0].text.contains("'fiscal year'"));
    assert!(items[0].text.contains("orders.year"));
}

#[test]
fn no_alias_hit_keeps_the_question() {
    let sk = sales_knowledge();
    let (rewritten, items) = gen_alias_rewrite("list the names", &sk);
    assert_eq!(rewritten, "list the names");
    assert!(items.is_empty());
}

#[test]
fn longest_alias_wins_on_overlap() {
    let sk = sales_knowledge();
    // "sales amount" (alias of orders.amount) and "amount" (alias of
    // orders.total) overlap; the longer phrase gets the substitution.
    let (rewritten, items) = gen_alias_rewrite("show the sales amount overall", &sk);
    assert_eq!(rewritten, "show the amount overall");
    assert_eq!(items.len(), 1);
    assert!(items[0].text.contains("orders.amount"));
}

// --- logical completion ------------------------------------------------------

fn rank_library() -> crate::fewshot::FewShotLibrary {
    let sql = "SELECT name FROM (SELECT name, RANK() OVER (ORDER BY sales DESC) AS r, \
               COUNT(*) OVER () AS n FROM emp) WHERE r <= n / 10";
    let pairs = vec![crate::fewshot::TrainPair {
        question: "top 10% of employees by sales".into(),
        sql: sql.into(),
        db_id: "sales".into(),
    }];
    let mut knowledge = BTreeMap::new();
    let mut sk = SchemaKnowledge::new("sales", Timestamp::epoch());
    sk.tables = vec![table(
        "emp",
        vec![column("name", "TEXT", &[]), column("sales", "REAL", &[]), column("r", "INTEGER", &[]), column("n", "INTEGER", &[])],
    )];
    knowledge.insert("sales".to_string(), sk);
    crate::fewshot::build_library(&pairs, &knowledge, &crate::llm_gateway::UnconfiguredGateway)
        .library
}

#[test]
fn best_match_pattern_describes_subquery_and_rank() {
    let lib = rank_library();
    let (items, entries) =
        gen_logical_completion(&lib, "top decile employees by sales", 5, None);
    assert_eq!(entries.len(), 1);
    assert_eq!(items.len(), 1);
    let text = &items[0].text;
    assert!(text.contains("subquery"), "{text}");
    assert!(text.contains("RANK"), "{text}");
}

#[test]
fn empty_library_produces_nothing() {
    let lib = crate::fewshot::FewShotLibrary::default();
    let (items, entries) = gen_logical_completion(&lib, "anything", 5, None);
    assert!(items.is_empty());
    assert!(entries.is_empty());
}

#[test]
fn k_larger_than_library_uses_all_entries() {
    let lib = rank_library();
    let (_, entries) = gen_logical_completion(&lib, "top 10% of employees by sales", 50, None);
    assert_eq!(entries.len(), lib.entries.len());
}

// --- orchestration -----------------------------------------------------------

fn script_routing(mock: &mut MockGateway, question: &str, sk: &SchemaKnowledge, body: &str) {
    mock.script(
        ROUTING_SYSTEM_PROMPT,
        &routing_user_prompt(question, sk),
        &format!("```json\n{body}\n```"),
    );
}

#[test]
fn empty_routing_single_table_question_yields_zero_items() {
    let sk = sales_knowledge();
    let mut mock = MockGateway::new();
    let question = "hello there";
    script_routing(
        &mut mock,
        question,
        &sk,
        "{\"numeric\": 0, \"domain\": 0, \"synonym\": 0, \"enum\": 0}",
    );
    let lib = crate::fewshot::FewShotLibrary::default();
    let bundle = build_evidence(question, &sk, &lib, &mock, 0.5, 5);
    assert!(bundle.items.is_empty());
    assert!(bundle.fewshot.is_empty());
    assert!(bundle.rewritten_question.is_none());

    // A non-empty library still attaches the few-shot block.
    let lib = rank_library();
    let bundle = build_evidence(question, &sk, &lib, &mock, 0.5, 5);
    assert!(bundle.items.is_empty(), "{:?}", bundle.items);
    assert!(!bundle.fewshot.is_empty());
}

#[test]
fn district_ratio_bundle_carries_enum_and_numeric_items() {
    let sk = schools_knowledge();
    let bundle = build_evidence(
        QUESTION_49,
        &sk,
        &crate::fewshot::FewShotLibrary::default(),
        &MockGateway::new(), // heuristic routing
        0.5,
        5,
    );
    let kinds: Vec<EvidenceKind> = bundle.items.iter().map(|i| i.kind).collect();
    assert!(kinds.contains(&EvidenceKind::EnumDictionary), "{kinds:?}");
    assert!(kinds.contains(&EvidenceKind::NumericTemplate), "{kinds:?}");
    let enum_item = bundle
        .items
        .iter()
        .find(|i| i.kind == EvidenceKind::EnumDictionary)
        .unwrap();
    assert!(enum_item.text.contains("52 = Elementary School District"));
    assert!(enum_item.text.contains("54 = Unified School District"));
}

#[test]
fn bundle_is_deterministic_with_a_mock_gateway() {
    let sk = schools_knowledge();
    let lib = rank_library();
    let a = build_evidence(QUESTION_49, &sk, &lib, &MockGateway::new(), 0.5, 5);
    let b = build_evidence(QUESTION_49, &sk, &lib, &MockGateway::new(), 0.5, 5);
    assert_eq!(a.canonical_bytes(), b.canonical_bytes());
}

#[test]
fn items_follow_canonical_kind_order_and_stay_grounded() {
    let sk = schools_knowledge();
    let bundle = build_evidence(
        QUESTION_49,
        &sk,
        &rank_library(),
        &MockGateway::new(),
        0.5,
        5,
    );
    let positions: Vec<usize> = bundle
        .items
        .iter()
        .map(|i| KIND_ORDER.iter().position(|k| *k == i.kind).unwrap())
        .collect();
    let mut sorted = positions.clone();
    sorted.sort_unstable();
    assert_eq!(positions, sorted);
    for item in &bundle.items {
        assert!(item.grounded_in(&sk), "ungrounded item: {item:?}");
    }
}

#[test]
fn generators_run_exactly_when_licensed() {
    let sk = sales_knowledge();
    let lib = crate::fewshot::FewShotLibrary::default();
    let cases = [
        ("{\"numeric\": 1, \"domain\": 0, \"synonym\": 0, \"enum\": 0}", "numeric_template"),
        ("{\"numeric\": 0, \"domain\": 1, \"synonym\": 0, \"enum\": 0}", "domain_provider"),
        ("{\"numeric\": 0, \"domain\": 0, \"synonym\": 1, \"enum\": 0}", "alias_rewrite"),
        ("{\"numeric\": 0, \"domain\": 0, \"synonym\": 0, \"enum\": 1}", "enum_dictionary"),
    ];
    let all: Vec<&str> = cases.iter().map(|(_, name)| *name).collect();
    for (body, licensed) in &cases {
        let question = format!("probe {licensed}");
        let mut mock = MockGateway::new();
        script_routing(&mut mock, &question, &sk, body);
        let build = build_evidence_full(
            &question,
            &sk,
            &lib,
            &mock,
            &NoopDomainProvider,
            0.5,
            5,
        );
        assert!(build.invoked.contains(licensed), "{licensed} should run");
        for other in &all {
            if other != licensed {
                assert!(
                    !build.invoked.contains(other),
                    "{other} ran without its label (case {licensed})"
                );
            }
        }
    }
}

#[test]
fn domain_notes_come_only_from_the_provider() {
    struct FixedProvider;
    impl DomainProvider for FixedProvider {
        fn retrieve(&self, _q: &str, sk: &SchemaKnowledge) -> Vec<DomainDoc> {
            vec![
                DomainDoc {
                    text: "Charter schools follow the state funding rule.".into(),
                    referenced: vec![ColumnRef::new(&sk.tables[0].name, "County")],
                },
                DomainDoc {
                    text: "Bogus reference.".into(),
                    referenced: vec![ColumnRef::new("nope", "nope")],
                },
            ]
        }
    }
    let sk = schools_knowledge();
    let question = "charter funding rules";
    let mut mock = MockGateway::new();
    script_routing(
        &mut mock,
        question,
        &sk,
        "{\"numeric\": 0, \"domain\": 1, \"synonym\": 0, \"enum\": 0}",
    );
    let build = build_evidence_full(
        question,
        &sk,
        &crate::fewshot::FewShotLibrary::default(),
        &mock,
        &FixedProvider,
        0.5,
        5,
    );
    let notes: Vec<&EvidenceItem> = build
        .bundle
        .items
        .iter()
        .filter(|i| i.kind == EvidenceKind::DomainNote)
        .collect();
    assert_eq!(notes.len(), 1, "ungrounded note must be dropped");
    assert!(notes[0].text.contains("state funding rule"));
    assert!(!build.warnings.is_empty());
}

// --- prompt assembly ----------------------------------------------------------

#[test]
fn empty_bundle_prompt_has_schema_and_question_but_no_evidence() {
    let sk = sales_knowledge();
    let bundle = EvidenceBundle::empty("list the names");
    let prompt = assemble_prompt("list the names", &sk, &bundle);
    assert!(prompt.contains("CREATE TABLE orders"));
    assert!(prompt.contains("Question: list the names"));
    assert!(!prompt.contains("Evidence:"));
    assert!(!prompt.contains("Examples:"));
}

#[test]
fn three_items_render_three_evidence_lines_in_order() {
    let sk = schools_knowledge();
    let bundle = build_evidence(
        QUESTION_49,
        &sk,
        &crate::fewshot::FewShotLibrary::default(),
        &MockGateway::new(),
        0.5,
        5,
    );
    assert!(bundle.items.len() >= 3);
    let prompt = assemble_prompt(bundle.final_question(), &sk, &bundle);
    let evidence_at = prompt.find("Evidence:\n").unwrap();
    let section_end = prompt[evidence_at..].find("\n\n").unwrap() + evidence_at;
    let section = &prompt[evidence_at + "Evidence:\n".len()..section_end];
    let lines: Vec<&str> = section.lines().collect();
    assert_eq!(lines.len(), bundle.items.len());
    for (line, item) in lines.iter().zip(&bundle.items) {
        assert_eq!(*line, item.text);
    }
}

#[test]
fn gold_evidence_replaces_the_bundle_verbatim() {
    let sk = schools_knowledge();
    let gold = "Elementary SD = DOC 52; Unified SD = DOC 54";
    let prompt = assemble_prompt_gold(QUESTION_49, &sk, Some(gold));
    assert!(prompt.contains(&format!("Evidence:\n{gold}\n")));
}

#[test]
fn gold_and_bundle_prompts_differ_only_inside_the_evidence_section() {
    let sk = schools_knowledge();
    let bundle = build_evidence(
        QUESTION_49,
        &sk,
        &crate::fewshot::FewShotLibrary::default(),
        &MockGateway::new(),
        0.5,
        5,
    );
    // Same final question for both prompts keeps the frame identical.
    let question = bundle.final_question().to_string();
    let with_bundle = assemble_prompt(&question, &sk, &bundle);
    let with_gold = assemble_prompt_gold(&question, &sk, Some("gold text"));
    let strip_evidence = |prompt: &str| -> Vec<String> {
        let mut out = Vec::new();
        let mut in_evidence = false;
        for line in prompt.lines() {
            if line == "Evidence:" {
                in_evidence = true;
                continue;
            }
            if in_evidence && line.is_empty() {
                in_evidence = false;
            }
            if !in_evidence {
                out.push(line.to_string());
            }
        }
        out
    };
    assert_eq!(strip_evidence(&with_bundle), strip_evidence(&with_gold));
    assert_ne!(with_bundle, with_gold);
}

// --- SQL extraction ------------------------------------------------------------

#[test]
fn fenced_sql_extracts_clean() {
    assert_eq!(extract_sql("```sql\nSELECT 1;\n```").unwrap(), "SELECT 1;");
    assert_eq!(extract_sql("```\nSELECT 2\n```").unwrap(), "SELECT 2");
}

#[test]
fn embedded_select_span_is_found() {
    assert_eq!(
        extract_sql("Sure thing. SELECT a FROM t").unwrap(),
        "SELECT a FROM t"
    );
    assert_eq!(
        extract_sql("Answer: SELECT a FROM t; hope that helps").unwrap(),
        "SELECT a FROM t;"
    );
    assert_eq!(
        extract_sql("use WITH cte AS (SELECT 1) SELECT * FROM cte;").unwrap(),
        "WITH cte AS (SELECT 1) SELECT * FROM cte;"
    );
}

#[test]
fn no_sql_is_an_extraction_error() {
    assert_eq!(extract_sql("I have no idea."), None);
    let mut mock = MockGateway::new();
    mock.script(SQL_SYSTEM_PROMPT, "prompt", "no answer");
    assert!(matches!(
        generate_sql(&mock, "prompt"),
        Err(GenerateError::NoSqlFound)
    ));
    assert!(matches!(
        generate_sql(&MockGateway::new(), "prompt"),
        Err(GenerateError::Gateway(_))
    ));
}

#[test]
fn generate_sql_returns_fenced_statement() {
    let mut mock = MockGateway::new();
    mock.script(SQL_SYSTEM_PROMPT, "the prompt", "```sql\nSELECT 1;\n```");
    assert_eq!(generate_sql(&mock, "the prompt").unwrap(), "SELECT 1;");
}

#[test]
fn long_item_text_truncates_at_sentence_boundary() {
    let long = format!("{}. {}", "a".repeat(380), "b".repeat(100));
    let item = EvidenceItem::new(EvidenceKind::DomainNote, long, Vec::new(), "test");
    assert!(item.text.chars().count() <= ITEM_TEXT_CAP);
    assert!(item.text.ends_with('.'));
}
