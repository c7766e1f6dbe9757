//! Schema and flow files.
//!
//! Schemas are JSON with top-level keys `properties`, `constraints`,
//! `origin` and the optional `ep` and `coverage_samples`. Flows are CSV with
//! a `flow_id,seq,<property names>` header; one file may hold several flows,
//! distinguished by flow_id, rows within a flow ordered by seq ascending.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate_instance, ContextFlow, ContextInstance, ContextSchema, PropertyKind, PropertySpec,
};
use crate::error::{Error, Result};
use crate::metric::{EpConfig, OriginSpec};

#[derive(Debug, Serialize, Deserialize)]
struct PropertyDoc {
    name: String,
    kind: PropertyKind,
    lower: f64,
    upper: f64,
    step: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaDoc {
    properties: Vec<PropertyDoc>,
    #[serde(default)]
    constraints: Vec<String>,
    #[serde(default)]
    origin: OriginSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ep: Option<EpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coverage_samples: Option<BTreeMap<String, Vec<f64>>>,
}

/// Load a schema file, rejecting structural and semantic problems.
pub fn load_schema(path: &Path) -> Result<ContextSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: SchemaDoc = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.column(), e.to_string()))?;

    let properties = doc
        .properties
        .iter()
        .map(|p| PropertySpec::new(&p.name, p.kind, p.lower, p.upper, p.step))
        .collect::<Result<Vec<_>>>()?;
    let mut schema = ContextSchema::new(properties, &doc.constraints).map_err(|e| match e {
        Error::Parse { line, col, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            col,
            msg,
        },
        other => other,
    })?;
    schema = schema.with_origin(doc.origin)?;
    if let Some(ep) = doc.ep {
        schema = schema.with_ep(ep)?;
    }
    if let Some(samples) = doc.coverage_samples {
        schema = schema.with_coverage_samples(samples)?;
    }
    Ok(schema)
}

/// Serialize a schema back to its JSON document form.
pub fn schema_to_json(schema: &ContextSchema) -> serde_json::Value {
    let doc = SchemaDoc {
        properties: schema
            .properties()
            .iter()
            .map(|p| PropertyDoc {
                name: p.name().to_string(),
                kind: p.kind(),
                lower: p.lower(),
                upper: p.upper(),
                step: p.step(),
            })
            .collect(),
        constraints: schema.constraints().iter().map(|c| c.text().to_string()).collect(),
        origin: schema.origin().clone(),
        ep: schema.ep().copied(),
        coverage_samples: schema.coverage_samples().cloned(),
    };
    serde_json::to_value(doc).expect("schema documents always serialize")
}

fn flow_header(schema: &ContextSchema) -> String {
    let mut cols = vec!["flow_id".to_string(), "seq".to_string()];
    cols.extend(schema.properties().iter().map(|p| p.name().to_string()));
    cols.join(",")
}

fn format_flow_rows(out: &mut String, flow: &ContextFlow) {
    for (seq, inst) in flow.instances.iter().enumerate() {
        out.push_str(&flow.id);
        out.push(',');
        out.push_str(&seq.to_string());
        for v in inst.values() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
}

/// Write one flow as CSV.
pub fn save_flow(schema: &ContextSchema, flow: &ContextFlow, path: &Path) -> Result<()> {
    save_flows(schema, std::slice::from_ref(flow), path)
}

/// Write several flows into one CSV file.
pub fn save_flows(schema: &ContextSchema, flows: &[ContextFlow], path: &Path) -> Result<()> {
    let mut out = flow_header(schema);
    out.push('\n');
    for flow in flows {
        format_flow_rows(&mut out, flow);
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load every flow in a CSV file, validating each instance against the
/// schema. Flows keep their first-appearance order.
pub fn load_flows(schema: &ContextSchema, path: &Path) -> Result<Vec<ContextFlow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(&display, 1, 1, "empty flow file"))?;
    let expected = flow_header(schema);
    if header.trim() != expected {
        return Err(Error::parse(
            &display,
            1,
            1,
            format!("bad header: expected `{expected}`, got `{}`", header.trim()),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<(u64, ContextInstance)>> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 + schema.arity() {
            return Err(Error::parse(
                &display,
                line_no,
                1,
                format!("expected {} fields, got {}", 2 + schema.arity(), fields.len()),
            ));
        }
        let flow_id = fields[0].to_string();
        let seq: u64 = fields[1].parse().map_err(|_| {
            Error::parse(&display, line_no, 2, format!("bad seq `{}`", fields[1]))
        })?;
        let mut values = Vec::with_capacity(schema.arity());
        for (i, field) in fields[2..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(&display, line_no, 3 + i, format!("bad number `{field}`"))
            })?;
            values.push(v);
        }
        let inst = ContextInstance::new(values);
        let report = validate_instance(schema, &inst)?;
        if !report.is_valid() {
            let detail = report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Constraint(format!(
                "{display}:{line_no}: instance rejected: {detail}"
            )));
        }
        if !grouped.contains_key(&flow_id) {
            order.push(flow_id.clone());
        }
        grouped.entry(flow_id).or_default().push((seq, inst));
    }

    let mut flows = Vec::with_capacity(order.len());
    for id in order {
        let rows = grouped.remove(&id).expect("grouped by construction");
        for pair in rows.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::parse(
                    &display,
                    1,
                    1,
                    format!("flow `{id}`: seq values must be strictly ascending"),
                ));
            }
        }
        flows.push(ContextFlow::new(
            id,
            rows.into_iter().map(|(_, inst)| inst).collect(),
        ));
    }
    Ok(flows)
}

/// Load a file expected to hold exactly one flow.
pub fn load_flow(schema: &ContextSchema, path: &Path) -> Result<ContextFlow> {
    let mut flows = load_flows(schema, path)?;
    match flows.len() {
        1 => Ok(flows.remove(0)),
        n => Err(Error::parse(
            path.display().to_string(),
            1,
            1,
            format!("expected exactly one flow, found {n}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{inst, webserver_schema};
    use tempfile::tempdir;

    const SCHEMA_JSON: &str = r#"{
        "properties": [
            {"name": "request_density", "kind": "integer", "lower": 1, "upper": 1000, "step": 1},
            {"name": "file_number", "kind": "integer", "lower": 1, "upper": 1000, "step": 1},
            {"name": "request_dispersion", "kind": "real", "lower": 0, "upper": 1, "step": 0.1}
        ],
        "constraints": ["file_number <= request_density"],
        "origin": {"mode": "lower_corner"},
        "ep": {"rho": 4.0, "epsilon": 0.25, "window_max": 8},
        "coverage_samples": {
            "request_density": [1, 10, 100, 1000],
            "file_number": [1, 5, 50, 500],
            "request_dispersion": [0, 0.5, 1]
        }
    }"#;

    #[test]
    fn schema_loads_with_metadata() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(&path, SCHEMA_JSON).unwrap();
        let schema = load_schema(&path).unwrap();
        assert_eq!(schema.arity(), 3);
        assert_eq!(schema.property(2).cardinality(), 11);
        assert_eq!(schema.constraints().len(), 1);
        assert_eq!(schema.ep().unwrap().rho, 4.0);
        assert_eq!(schema.coverage_samples().unwrap()["file_number"].len(), 4);
    }

    #[test]
    fn schema_origin_modes_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(
            &path,
            r#"{"properties": [{"name": "a", "kind": "integer", "lower": 0, "upper": 10, "step": 1}],
                "origin": {"mode": "explicit", "values": [5]}}"#,
        )
        .unwrap();
        let schema = load_schema(&path).unwrap();
        assert_eq!(schema.origin().resolve(&schema), vec![0.5]);

        // An explicit origin violating the constraints is rejected.
        std::fs::write(
            &path,
            r#"{"properties": [{"name": "a", "kind": "integer", "lower": 0, "upper": 10, "step": 1}],
                "constraints": ["a >= 2"],
                "origin": {"mode": "explicit", "values": [1]}}"#,
        )
        .unwrap();
        assert!(load_schema(&path).is_err());
    }

    #[test]
    fn schema_with_unknown_constraint_property_fails() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(
            &path,
            r#"{"properties": [{"name": "a", "kind": "integer", "lower": 0, "upper": 1, "step": 1}],
                "constraints": ["b <= a"]}"#,
        )
        .unwrap();
        let err = load_schema(&path).unwrap_err();
        assert!(err.to_string().contains('b'));
    }

    #[test]
    fn flow_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        let schema = webserver_schema();
        let flow = ContextFlow::new("f1", vec![inst(&[12.0, 3.0, 0.5])]);
        save_flow(&schema, &flow, &path).unwrap();
        let loaded = load_flow(&schema, &path).unwrap();
        assert_eq!(loaded, flow);
    }

    #[test]
    fn multi_flow_round_trip_keeps_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flows.csv");
        let schema = webserver_schema();
        let flows = vec![
            ContextFlow::new("b", vec![inst(&[12.0, 3.0, 0.5]), inst(&[100.0, 50.0, 0.1])]),
            ContextFlow::new("a", vec![inst(&[1.0, 1.0, 0.0])]),
        ];
        save_flows(&schema, &flows, &path).unwrap();
        let loaded = load_flows(&schema, &path).unwrap();
        assert_eq!(loaded, flows);
    }

    #[test]
    fn invalid_instances_are_rejected_on_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        let schema = webserver_schema();
        std::fs::write(
            &path,
            "flow_id,seq,request_density,file_number,request_dispersion\nf,0,5,100,1\n",
        )
        .unwrap();
        let err = load_flow(&schema, &path).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)), "{err}");
    }

    #[test]
    fn short_rows_are_parse_errors_at_their_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        let schema = webserver_schema();
        std::fs::write(
            &path,
            "flow_id,seq,request_density,file_number,request_dispersion\nf,0,12,3,0.5\nf,1,7,2\n",
        )
        .unwrap();
        let err = load_flow(&schema, &path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_ascending_seq_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        let schema = webserver_schema();
        std::fs::write(
            &path,
            "flow_id,seq,request_density,file_number,request_dispersion\nf,1,12,3,0.5\nf,0,12,3,0.5\n",
        )
        .unwrap();
        assert!(load_flow(&schema, &path).is_err());
    }
}
