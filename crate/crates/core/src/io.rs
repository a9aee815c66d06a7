//! File formats shared by the pipeline stages. Every CSV starts with one
//! `# <schema> key=value ...` comment line.

use std::collections::BTreeMap;
use std::io::Write;

use crate::ecosystem::{Ecosystem, GroundTruthBehavior, Member, SocialGraph, UserProfile};
use crate::error::{Error, Result};

pub const POPULATION_SCHEMA: &str = "feedshape-population/1";
pub const GRAPH_SCHEMA: &str = "feedshape-graph/1";

pub fn write_header<W: Write>(w: &mut W, schema: &str, fields: &[(&str, String)]) -> Result<()> {
    write!(w, "# {schema}")?;
    for (k, v) in fields {
        write!(w, " {k}={v}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Checks the schema line and returns its key/value pairs and the rest of
/// the text.
pub fn split_header<'a>(text: &'a str, schema: &str) -> Result<(BTreeMap<String, String>, &'a str)> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let rest = first
        .trim_end_matches('\r')
        .strip_prefix("# ")
        .and_then(|r| r.strip_prefix(schema))
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| Error::schema(format!("expected `# {schema}` header")))?;
    let mut params = BTreeMap::new();
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::schema(format!("malformed header field {kv:?}")))?;
        params.insert(k.to_string(), v.to_string());
    }
    Ok((params, body))
}

pub fn header_value<T: std::str::FromStr>(params: &BTreeMap<String, String>, key: &str) -> Result<T> {
    params.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| Error::schema(format!("header lacks a valid `{key}`")))
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec.get(i).ok_or_else(|| Error::schema(format!("missing column {i}")))?;
    s.parse().map_err(|_| Error::schema(format!("unparseable value {s:?} in column {i}")))
}

/// Population with cohorts and ground-truth behaviour.
pub fn write_population_csv<W: Write>(mut w: W, eco: &Ecosystem) -> Result<()> {
    let n_countries =
        eco.members.first().map_or(1, |m| m.profile.static_features.len() - crate::ecosystem::COHORT_SLOTS - 2);
    write_header(
        &mut w,
        POPULATION_SCHEMA,
        &[("seed", eco.graph.seed().to_string()), ("n_countries", n_countries.to_string())],
    )?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "user_id",
        "activity_level",
        "contribution_level",
        "country",
        "n_followers",
        "n_followees",
        "base",
        "gain",
        "rho",
    ])?;
    for m in &eco.members {
        let p = &m.profile;
        let b = &m.behavior;
        cw.write_record([
            p.user_id.to_string(),
            p.activity_level.to_string(),
            p.contribution_level.to_string(),
            p.country.to_string(),
            p.n_followers.to_string(),
            p.n_followees.to_string(),
            b.base.to_string(),
            b.gain.to_string(),
            b.rho.to_string(),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_population_csv(text: &str) -> Result<Vec<Member>> {
    let (params, body) = split_header(text, POPULATION_SCHEMA)?;
    let n_countries: usize = header_value(&params, "n_countries")?;
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let country: u8 = parse(&rec, 3)?;
        if country as usize >= n_countries {
            return Err(Error::schema(format!("country {country} out of range")));
        }
        let profile = UserProfile::new(
            parse(&rec, 0)?,
            parse(&rec, 1)?,
            parse(&rec, 2)?,
            country,
            n_countries,
            parse(&rec, 4)?,
            parse(&rec, 5)?,
        );
        let behavior = GroundTruthBehavior::new(parse(&rec, 6)?, parse(&rec, 7)?, parse(&rec, 8)?)
            .map_err(|e| Error::schema(e.to_string()))?;
        out.push(Member { profile, behavior });
    }
    Ok(out)
}

/// Follow edges (consumer, creator) with their affinity.
pub fn write_graph_csv<W: Write>(mut w: W, eco: &Ecosystem) -> Result<()> {
    write_header(
        &mut w,
        GRAPH_SCHEMA,
        &[("seed", eco.graph.seed().to_string()), ("n_users", eco.n_users().to_string())],
    )?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["consumer", "creator", "affinity"])?;
    for ((u, v), aff) in eco.graph.edges().zip(&eco.affinity) {
        cw.write_record([u.to_string(), v.to_string(), aff.to_string()])?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_graph_csv(text: &str) -> Result<(SocialGraph, Vec<f64>)> {
    let (params, body) = split_header(text, GRAPH_SCHEMA)?;
    let seed: u64 = header_value(&params, "seed")?;
    let n_users: usize = header_value(&params, "n_users")?;
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let mut edges = Vec::new();
    let mut affinity = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        edges.push((parse(&rec, 0)?, parse(&rec, 1)?));
        affinity.push(parse(&rec, 2)?);
    }
    let graph = SocialGraph::from_edges(n_users, seed, &edges).map_err(|e| Error::schema(e.to_string()))?;
    // from_edges canonicalises edge order; keep affinities aligned with it.
    let mut pairs: Vec<((u32, u32), f64)> = edges.into_iter().zip(affinity).collect();
    pairs.sort_by_key(|p| p.0);
    let affinity = pairs.into_iter().map(|p| p.1).collect();
    Ok((graph, affinity))
}

/// Rebuilds an ecosystem from its population and graph files.
pub fn read_ecosystem(population_csv: &str, graph_csv: &str) -> Result<Ecosystem> {
    let members = read_population_csv(population_csv)?;
    let (graph, affinity) = read_graph_csv(graph_csv)?;
    Ecosystem::from_parts(graph, members, affinity).map_err(|e| Error::schema(e.to_string()))
}
