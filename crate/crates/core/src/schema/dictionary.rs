use std::fmt::Write;

use super::ConstellationSchema;

/// Renders the schema as a Markdown data dictionary.
pub fn data_dictionary(schema: &ConstellationSchema) -> String {
    let mut out = String::from("# Data dictionary\n\n## Fact tables\n\n");
    for fact in &schema.facts {
        let _ = writeln!(out, "### {}\n", fact.name);
        let _ = writeln!(out, "Dimensions: {}\n", fact.dimension_refs.join(", "));
        out.push_str("| Column | Type | Nullable | Role |\n|---|---|---|---|\n");
        for col in schema.fact_columns(fact) {
            let role = if fact.measures.iter().any(|m| m.name == col.name) { "measure" } else { "foreign key" };
            let _ = writeln!(out, "| {} | {} | {} | {} |", col.name, col.kind, yes_no(col.nullable), role);
        }
        out.push('\n');
    }

    out.push_str("## Dimension tables\n\n");
    for dim in &schema.dimensions {
        let _ = writeln!(out, "### {}\n", dim.name);
        let _ = writeln!(out, "Surrogate key: `{}`; natural key: `{}`", dim.surrogate_key, dim.natural_key.join("`, `"));
        if let Some(parent) = &dim.supports {
            let _ = writeln!(out, "; supports `{parent}`");
        }
        out.push('\n');
        let links = schema.dimension_links(dim);
        out.push_str("| Column | Type | Nullable | Role |\n|---|---|---|---|\n");
        for col in &dim.columns {
            let role = if col.name == dim.surrogate_key {
                "surrogate key".to_string()
            } else if let Some((_, target)) = links.iter().find(|(c, _)| *c == col.name) {
                format!("references {target}")
            } else if dim.natural_key.contains(&col.name) {
                "natural key".to_string()
            } else {
                String::new()
            };
            let _ = writeln!(out, "| {} | {} | {} | {} |", col.name, col.kind, yes_no(col.nullable), role);
        }
        out.push('\n');
    }

    out.push_str("## Hierarchies\n\n");
    for h in &schema.hierarchies {
        let levels: Vec<String> = h.levels.iter().map(|l| format!("{} ({}.{})", l.name, l.dimension, l.column)).collect();
        let _ = writeln!(out, "- **{}**: {}", h.name, levels.join(" → "));
    }
    out
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::build_default_schema;

    #[test]
    fn dictionary_lists_every_table() {
        let s = build_default_schema();
        let md = data_dictionary(&s);
        for name in s.table_names() {
            assert!(md.contains(&format!("### {name}\n")), "{name}");
        }
        assert!(md.contains("| SiteID | int64 | no | references Site |"));
    }
}
