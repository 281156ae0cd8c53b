//! Reader for the TNTP-style network, trips and charging-station files.
//!
//! Network file: metadata lines `<NUM ARCS> n` (required) and optionally
//! `<LATENCY MODEL> standard|linear`, then records `tail head free_time capacity`.
//! Trips file: records `origin dest demand class` with class `EV` or `GV`.
//! Station file: records `node t_fcs0 t_bar capacity owned(0|1) rival_price`.
//!
//! Blank lines and lines starting with `~` or `#` are ignored; a trailing `;`
//! on a record is accepted. Numbers always use `.` as decimal separator.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{
    LatencyModel, NodeId, OdDemand, OdPair, RoadArc, Station, TransportNetwork, VehicleClass,
};

pub(crate) struct Record<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

pub(crate) fn records<'a>(src: &'a str) -> impl Iterator<Item = Record<'a>> {
    src.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') || line.starts_with('#') {
            return None;
        }
        let line = line.trim_end_matches(';').trim();
        Some(Record {
            line: i + 1,
            fields: line.split_whitespace().collect(),
        })
    })
}

pub(crate) struct Ctx<'a> {
    pub file: &'a str,
}

impl Ctx<'_> {
    pub(crate) fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn num(&self, rec: &Record, i: usize, what: &str) -> Result<f64> {
        let s = rec.fields[i];
        s.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| self.err(rec.line, format!("invalid {what} `{s}`")))
    }

    pub(crate) fn node(&self, rec: &Record, i: usize) -> Result<NodeId> {
        let s = rec.fields[i];
        s.parse::<NodeId>()
            .map_err(|_| self.err(rec.line, format!("invalid node id `{s}`")))
    }

    pub(crate) fn arity(&self, rec: &Record, n: usize, layout: &str) -> Result<()> {
        if rec.fields.len() != n {
            return Err(self.err(
                rec.line,
                format!("expected {n} fields `{layout}`, found {}", rec.fields.len()),
            ));
        }
        Ok(())
    }
}

pub struct NetworkFile {
    pub arcs: Vec<RoadArc>,
    pub latency: LatencyModel,
}

pub fn parse_network(src: &str, file: &str) -> Result<NetworkFile> {
    let ctx = Ctx { file };
    let mut declared: Option<(usize, usize)> = None;
    let mut latency = LatencyModel::Standard;
    let mut arcs = Vec::new();
    for rec in records(src) {
        let first = rec.fields[0];
        if first.starts_with('<') {
            let joined = rec.fields.join(" ");
            let Some(close) = joined.find('>') else {
                return Err(ctx.err(rec.line, "unterminated metadata tag"));
            };
            let tag = joined[1..close].trim().to_ascii_uppercase();
            let value = joined[close + 1..].trim();
            match tag.as_str() {
                "NUM ARCS" | "NUMBER OF LINKS" | "NUMBER OF ARCS" => {
                    let n = value
                        .parse::<usize>()
                        .map_err(|_| ctx.err(rec.line, format!("invalid arc count `{value}`")))?;
                    declared = Some((n, rec.line));
                }
                "LATENCY MODEL" => {
                    latency = value.parse().map_err(|e: Error| ctx.err(rec.line, e.to_string()))?
                }
                _ => {}
            }
            continue;
        }
        ctx.arity(&rec, 4, "tail head free_time capacity")?;
        arcs.push(RoadArc {
            tail: ctx.node(&rec, 0)?,
            head: ctx.node(&rec, 1)?,
            free_time: ctx.num(&rec, 2, "free time")?,
            capacity: ctx.num(&rec, 3, "capacity")?,
        });
    }
    let Some((n, line)) = declared else {
        return Err(ctx.err(1, "missing `<NUM ARCS> n` header"));
    };
    if n != arcs.len() {
        return Err(ctx.err(
            line,
            format!("header declares {n} arcs but {} records follow", arcs.len()),
        ));
    }
    Ok(NetworkFile { arcs, latency })
}

pub fn parse_trips(src: &str, file: &str) -> Result<Vec<OdPair>> {
    let ctx = Ctx { file };
    let mut pairs = Vec::new();
    for rec in records(src) {
        ctx.arity(&rec, 4, "origin dest demand class")?;
        let class: VehicleClass = rec.fields[3]
            .parse()
            .map_err(|m: String| ctx.err(rec.line, m))?;
        let pair = OdPair {
            origin: ctx.node(&rec, 0)?,
            dest: ctx.node(&rec, 1)?,
            demand: ctx.num(&rec, 2, "demand")?,
            class,
        };
        if pair.origin == pair.dest {
            return Err(ctx.err(rec.line, "origin equals destination"));
        }
        if !(pair.demand > 0.0) {
            return Err(ctx.err(rec.line, "demand must be positive"));
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::NoOdPairs);
    }
    Ok(pairs)
}

pub fn parse_stations(src: &str, file: &str) -> Result<Vec<Station>> {
    let ctx = Ctx { file };
    let mut out = Vec::new();
    for rec in records(src) {
        ctx.arity(&rec, 6, "node t_fcs0 t_bar capacity owned rival_price")?;
        let owned = match rec.fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(ctx.err(rec.line, format!("owned flag must be 0 or 1, got `{other}`"))),
        };
        out.push(Station {
            node: ctx.node(&rec, 0)?,
            free_charge_time: ctx.num(&rec, 1, "free charge time")?,
            wait_coeff: ctx.num(&rec, 2, "waiting coefficient")?,
            capacity: ctx.num(&rec, 3, "capacity")?,
            owned,
            rival_price: ctx.num(&rec, 5, "rival price")?,
        });
    }
    Ok(out)
}

/// Assembles a network and demand from already-read file contents.
pub fn parse_tntp(
    (net_src, net_name): (&str, &str),
    (trips_src, trips_name): (&str, &str),
    (fcs_src, fcs_name): (&str, &str),
) -> Result<(TransportNetwork, OdDemand)> {
    let nf = parse_network(net_src, net_name)?;
    let pairs = parse_trips(trips_src, trips_name)?;
    let stations = parse_stations(fcs_src, fcs_name)?;
    let nodes: BTreeSet<NodeId> = nf.arcs.iter().flat_map(|a| [a.tail, a.head]).collect();
    for s in &stations {
        if !nodes.contains(&s.node) {
            return Err(Error::UnknownNode {
                node: s.node,
                context: format!("charging station in {fcs_name}"),
            });
        }
    }
    let net = TransportNetwork::new(nodes, nf.arcs, stations, nf.latency)?;
    let demand = OdDemand::new(pairs)?;
    demand.check_nodes(&net)?;
    Ok((net, demand))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn load_tntp(
    net_file: impl AsRef<Path>,
    trips_file: impl AsRef<Path>,
    fcs_file: impl AsRef<Path>,
) -> Result<(TransportNetwork, OdDemand)> {
    let (n, t, f) = (net_file.as_ref(), trips_file.as_ref(), fcs_file.as_ref());
    let (ns, ts, fs) = (read(n)?, read(t)?, read(f)?);
    parse_tntp(
        (&ns, &n.display().to_string()),
        (&ts, &t.display().to_string()),
        (&fs, &f.display().to_string()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn nguyen_dupuis_counts() {
        let (net, demand) = parse_tntp(
            (fixtures::ND_NET, "nd.net"),
            (fixtures::ND_TRIPS, "nd.trips"),
            (fixtures::ND_FCS, "nd.fcs"),
        )
        .unwrap();
        assert_eq!(net.num_nodes(), 13);
        assert_eq!(net.num_arcs(), 18);
        assert_eq!(net.num_stations(), 4);
        assert_eq!(demand.len(), 4);
    }

    #[test]
    fn empty_trips() {
        let err = parse_tntp(
            (fixtures::ND_NET, "nd.net"),
            ("~ nothing here\n", "empty.trips"),
            (fixtures::ND_FCS, "nd.fcs"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoOdPairs));
        assert_eq!(err.to_string(), "no OD pairs");
    }

    #[test]
    fn station_on_unknown_node() {
        let err = parse_tntp(
            (fixtures::ND_NET, "nd.net"),
            (fixtures::ND_TRIPS, "nd.trips"),
            ("99 0.5 0.5 10 1 215\n", "bad.fcs"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownNode { node: 99, .. }));
        assert!(err.to_string().contains("unknown node"));
    }

    #[test]
    fn parse_error_carries_line() {
        let src = "<NUM ARCS> 2\n~ comment\n1 2 1.0 10\n2 3 x 10\n";
        match parse_network(src, "n.net") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}", other = other.err()),
        }
    }

    #[test]
    fn header_count_mismatch() {
        let src = "<NUM ARCS> 3\n1 2 1.0 10\n";
        assert!(matches!(parse_network(src, "n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_class_and_owned_flag() {
        assert!(parse_trips("1 2 3.0 XX\n", "t").is_err());
        assert!(parse_stations("1 0.5 0.5 1 2 10\n", "f").is_err());
    }

    #[test]
    fn trailing_semicolons_and_latency_tag() {
        let src = "<NUM ARCS> 1\n<LATENCY MODEL> linear\n1 2 1.0 10 ;\n";
        let nf = parse_network(src, "n").unwrap();
        assert_eq!(nf.latency, LatencyModel::Linear);
        assert_eq!(nf.arcs[0].capacity, 10.0);
    }
}
