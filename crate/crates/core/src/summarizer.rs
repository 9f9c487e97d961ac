//! Question-specific schema views that fit a token budget.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::catalog::{ColumnDescriptor, SchemaCatalog, TableEntry};
use crate::finding::Finding;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, Stage};
use crate::prompts::PromptAssets;
use crate::text;

const STAGE: &str = "summarizer";
pub const MIN_BUDGET: usize = 512;
const EXCERPT_VALUES: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SummarizerError {
    #[error("token budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Table,
    Column,
}

/// A whole table (`column: None`) or one column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemaRef {
    pub table: String,
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaView {
    pub source_db: String,
    /// Every table and column that appears in `rendered`; names are the
    /// catalog's canonical spelling.
    pub included: BTreeSet<SchemaRef>,
    pub rendered: String,
}

impl SchemaView {
    pub fn tokens(&self) -> usize {
        text::estimate_tokens(&self.rendered)
    }

    pub fn includes_column(&self, table: &str, column: &str) -> bool {
        self.included.contains(&SchemaRef { table: table.into(), column: Some(column.into()) })
    }
}

/// Tables with the columns to show, in render order.
type Selection = Vec<(String, Vec<String>)>;

fn full_selection(catalog: &SchemaCatalog) -> Selection {
    catalog
        .tables
        .iter()
        .map(|t| (t.name.clone(), t.columns.iter().map(|c| c.original_column_name.clone()).collect()))
        .collect()
}

pub fn full_view(catalog: &SchemaCatalog) -> SchemaView {
    build_view(catalog, &full_selection(catalog))
}

fn build_view(catalog: &SchemaCatalog, selection: &Selection) -> SchemaView {
    let mut included = BTreeSet::new();
    let mut blocks = Vec::new();
    for table in &catalog.tables {
        let Some((_, cols)) = selection.iter().find(|(t, _)| *t == table.name) else {
            continue;
        };
        let shown: Vec<&ColumnDescriptor> =
            table.columns.iter().filter(|c| cols.contains(&c.original_column_name)).collect();
        if shown.is_empty() {
            continue;
        }
        included.insert(SchemaRef { table: table.name.clone(), column: None });
        for c in &shown {
            included.insert(SchemaRef { table: table.name.clone(), column: Some(c.original_column_name.clone()) });
        }
        blocks.push(render_table(catalog, table, &shown, selection));
    }
    SchemaView { source_db: catalog.db_id.clone(), included, rendered: blocks.join("\n") }
}

fn render_table(catalog: &SchemaCatalog, table: &TableEntry, shown: &[&ColumnDescriptor], selection: &Selection) -> String {
    // (definition, trailing comment); the comma goes between the two
    let mut elems: Vec<(String, Option<String>)> = Vec::new();
    for c in shown {
        let mut def = format!("`{}` {}", c.original_column_name, c.declared_type);
        if c.is_primary_key {
            def.push_str(" PRIMARY KEY");
        }
        let mut notes = Vec::new();
        let desc = collapse(if c.column_description.is_empty() { &c.display_name } else { &c.column_description });
        if !desc.is_empty() && !desc.eq_ignore_ascii_case(&c.original_column_name) {
            notes.push(desc);
        }
        let vd = collapse(&c.value_description);
        if !vd.is_empty() {
            notes.push(vd);
        }
        if let Some(p) = catalog.profile(&c.column_ref()) {
            if !p.sampled_values.is_empty() {
                let mut ex: Vec<String> =
                    p.sampled_values.iter().take(EXCERPT_VALUES).map(|v| format!("'{}'", collapse(v))).collect();
                if p.sampled_values.len() > EXCERPT_VALUES || p.is_capped {
                    ex.push("...".into());
                }
                notes.push(format!("values: {}", ex.join(", ")));
            }
        }
        elems.push((def, (!notes.is_empty()).then(|| notes.join(" | "))));
    }
    for c in shown {
        for r in &c.foreign_refs {
            if selection.iter().any(|(t, cols)| *t == r.table && cols.contains(&r.column)) {
                let def = format!("FOREIGN KEY (`{}`) REFERENCES `{}`(`{}`)", c.original_column_name, r.table, r.column);
                elems.push((def, None));
            }
        }
    }
    let last = elems.len().saturating_sub(1);
    let lines: Vec<String> = elems
        .into_iter()
        .enumerate()
        .map(|(i, (def, note))| {
            let sep = if i < last { "," } else { "" };
            match note {
                Some(n) => format!("  {def}{sep} -- {n}"),
                None => format!("  {def}{sep}"),
            }
        })
        .collect();
    format!("CREATE TABLE `{}` (\n{}\n);", table.name, lines.join("\n"))
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns the full schema when it fits `budget`; otherwise asks the model
/// which tables or columns matter and renders those. Model failures and
/// unusable replies fall back to a budget-truncated full schema.
pub fn summarize(
    catalog: &SchemaCatalog,
    question: &str,
    budget: usize,
    gateway: &Gateway,
    model_id: &str,
    prompts: &PromptAssets,
    granularity: Granularity,
) -> Result<(SchemaView, Vec<Finding>), SummarizerError> {
    if budget < MIN_BUDGET {
        return Err(SummarizerError::BudgetTooSmall(budget));
    }
    let full = full_view(catalog);
    if full.tokens() <= budget {
        return Ok((full, Vec::new()));
    }
    let mut findings = Vec::new();
    let mut selection = None;
    if gateway.has_chat() {
        let request = ChatRequest::new(
            model_id,
            vec![ChatMessage::user(
                prompts.summarize.replace("{tables}", &table_listing(catalog)).replace("{question}", question),
            )],
        );
        match gateway.chat(Stage::Summarize, &request) {
            Ok(reply) => {
                let sel = parse_selection(&reply, catalog, granularity, &mut findings);
                if sel.is_empty() {
                    findings.push(Finding::warning(STAGE, "model selected no known schema elements; truncating full schema"));
                } else {
                    selection = Some(sel);
                }
            }
            Err(e) => findings.push(Finding::warning(STAGE, format!("summarization failed: {e}; truncating full schema"))),
        }
    } else {
        findings.push(Finding::info(STAGE, "no chat model; truncating full schema"));
    }
    let selection = selection.unwrap_or_else(|| fallback_order(catalog, question));
    let view = fit(catalog, &selection, budget);
    if view.included.is_empty() {
        findings.push(Finding::warning(STAGE, format!("no table fits the budget of {budget} tokens")));
    }
    Ok((view, findings))
}

fn table_listing(catalog: &SchemaCatalog) -> String {
    let mut out = String::new();
    for t in &catalog.tables {
        let cols: Vec<&str> = t.columns.iter().map(|c| c.original_column_name.as_str()).collect();
        out.push_str(&format!("{}({})\n", t.name, cols.join(", ")));
    }
    out
}

/// Resolves `table` and `table.column` lines against the catalog. Key
/// columns of selected tables are always kept so joins stay expressible.
fn parse_selection(
    reply: &str,
    catalog: &SchemaCatalog,
    granularity: Granularity,
    findings: &mut Vec<Finding>,
) -> Selection {
    let mut sel: Selection = Vec::new();
    let mut whole: BTreeSet<String> = BTreeSet::new();
    for raw in crate::catalog::strip_code_fence(reply).lines().flat_map(|l| l.split(',')) {
        let item = raw.trim().trim_start_matches(['-', '*']).trim().replace(['`', '"'], "");
        if item.is_empty() {
            continue;
        }
        let (tname, cname) = match item.split_once('.') {
            Some((t, c)) => (t.trim(), Some(c.trim())),
            None => (item.as_str(), None),
        };
        let Some(table) = catalog.table(tname) else {
            findings.push(Finding::warning(STAGE, format!("dropped unknown table `{tname}`")));
            continue;
        };
        let cname = if granularity == Granularity::Table { None } else { cname };
        let col = match cname {
            None => None,
            Some(c) => match catalog.column(&table.name, c) {
                Some(d) => Some(d.original_column_name.clone()),
                None => {
                    findings.push(Finding::warning(STAGE, format!("dropped unknown column `{tname}.{c}`")));
                    continue;
                }
            },
        };
        let idx = match sel.iter().position(|(t, _)| *t == table.name) {
            Some(i) => i,
            None => {
                sel.push((table.name.clone(), Vec::new()));
                sel.len() - 1
            }
        };
        match col {
            None => {
                whole.insert(table.name.clone());
            }
            Some(c) if !sel[idx].1.contains(&c) => sel[idx].1.push(c),
            Some(_) => {}
        }
    }
    for (tname, cols) in &mut sel {
        let table = catalog.table(tname).expect("resolved above");
        let keep = |c: &ColumnDescriptor| {
            whole.contains(tname) || cols.contains(&c.original_column_name) || c.is_primary_key || !c.foreign_refs.is_empty()
        };
        *cols = table.columns.iter().filter(|c| keep(c)).map(|c| c.original_column_name.clone()).collect();
    }
    sel
}

/// Tables sharing a word with the question first, then declaration order.
fn fallback_order(catalog: &SchemaCatalog, question: &str) -> Selection {
    let q: BTreeSet<String> =
        text::tokenize(question).into_iter().map(|t| t.lower).filter(|w| !text::is_stopword(w)).collect();
    let mentions = |t: &TableEntry| {
        text::identifier_words(&t.name).iter().any(|w| q.contains(w))
            || t.columns.iter().any(|c| {
                text::identifier_words(&c.original_column_name).iter().any(|w| q.contains(w))
                    || text::identifier_words(&c.display_name).iter().any(|w| q.contains(w))
            })
    };
    let (mut first, rest): (Selection, Selection) = full_selection(catalog)
        .into_iter()
        .partition(|(t, _)| catalog.table(t).is_some_and(&mentions));
    first.extend(rest);
    first
}

/// Greedily adds each table in order, keeping the longest column prefix
/// that stays within `budget`.
fn fit(catalog: &SchemaCatalog, order: &Selection, budget: usize) -> SchemaView {
    let mut chosen: Selection = Vec::new();
    let mut view = build_view(catalog, &chosen);
    for (table, cols) in order {
        let try_prefix = |n: usize, chosen: &Selection| {
            let mut next = chosen.clone();
            next.push((table.clone(), cols[..n].to_vec()));
            build_view(catalog, &next)
        };
        let whole = try_prefix(cols.len(), &chosen);
        if whole.tokens() <= budget {
            chosen.push((table.clone(), cols.clone()));
            view = whole;
            continue;
        }
        // largest n in [0, len) whose prefix fits
        let (mut lo, mut hi) = (0usize, cols.len());
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if try_prefix(mid, &chosen).tokens() <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo > 0 {
            view = try_prefix(lo, &chosen);
            chosen.push((table.clone(), cols[..lo].to_vec()));
        }
    }
    view
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatTransport, TransportError};
    use crate::testutil;
    use std::sync::Arc;

    struct Fixed(&'static str);

    impl ChatTransport for Fixed {
        fn complete(&self, _: &ChatRequest) -> Result<String, TransportError> {
            Ok(self.0.to_string())
        }
    }

    fn gw(reply: &'static str) -> Gateway {
        Gateway::builder().chat(Arc::new(Fixed(reply))).build()
    }

    fn rendered_names(view: &SchemaView) -> BTreeSet<SchemaRef> {
        let mut out = BTreeSet::new();
        let mut table = None;
        for line in view.rendered.lines() {
            if let Some(rest) = line.strip_prefix("CREATE TABLE `") {
                let t = rest.split('`').next().unwrap().to_string();
                out.insert(SchemaRef { table: t.clone(), column: None });
                table = Some(t);
            } else if let Some(rest) = line.strip_prefix("  `") {
                let c = rest.split('`').next().unwrap().to_string();
                out.insert(SchemaRef { table: table.clone().unwrap(), column: Some(c) });
            }
        }
        out
    }

    #[test]
    fn small_schema_is_returned_whole_without_a_call() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let g = gw("district");
        let (view, findings) = summarize(&cat, "q", 8192, &g, "m", &PromptAssets::default(), Granularity::Column).unwrap();
        assert_eq!(view, full_view(&cat));
        assert!(findings.is_empty());
        assert_eq!(g.transport_calls(), 0);
        assert_eq!(rendered_names(&view), view.included);
        let cols = cat.columns().count();
        assert_eq!(view.included.len(), cols + cat.tables.len());
    }

    #[test]
    fn rendering_carries_descriptions_values_and_keys() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let r = full_view(&cat).rendered;
        assert!(r.contains("`gender` TEXT, -- "), "{r}");
        assert!(r.contains("values: 'F', 'M'"), "{r}");
        assert!(r.contains("FOREIGN KEY (`district_id`) REFERENCES `district`(`district_id`)\n);"), "{r}");
        assert!(r.starts_with("CREATE TABLE `district` (\n"));
    }

    #[test]
    fn below_minimum_budget_is_rejected() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let err = summarize(&cat, "q", 100, &Gateway::offline(), "m", &PromptAssets::default(), Granularity::Table);
        assert_eq!(err.unwrap_err(), SummarizerError::BudgetTooSmall(100));
    }

    #[test]
    fn selection_is_resolved_and_hallucinations_dropped() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let mut findings = Vec::new();
        let sel = parse_selection("CLIENT.Gender\nghost\nclient.nope\n", &cat, Granularity::Column, &mut findings);
        assert_eq!(sel, vec![("client".to_string(), vec!["client_id".to_string(), "gender".into(), "district_id".into()])]);
        assert_eq!(findings.len(), 2);
    }

    #[test]
    fn fit_respects_budget_and_prefers_question_tables() {
        let root = testutil::fixture_root();
        let cat = testutil::profiled(root.path(), "financial");
        let order = fallback_order(&cat, "How many clients are female by gender?");
        assert_eq!(order[0].0, "client");
        let full = full_view(&cat).tokens();
        for budget in [1, 20, 60, full / 2, full - 1, full] {
            let v = fit(&cat, &order, budget);
            assert!(v.tokens() <= budget);
            assert_eq!(rendered_names(&v), v.included);
        }
    }
}
