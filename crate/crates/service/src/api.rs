//! Read-only JSON API over sweep directories.
//!
//! Every handler is a pure function of the files under the root, so equal
//! requests give equal bytes. Errors are `{"error": {"code", "message"}}`
//! with status 400 (bad request), 404 (unknown dataset, cell or route) or
//! 409 (sweep not complete).

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use viewuq_core::demo1d::{read_envelope, ENSEMBLE_CSV, MC_CSV};
use viewuq_core::sweep::{heatmap_grid, Channel, Method, Quantity, SweepData, SweepRecord, MANIFEST_FILE, RECORD_FIELDS};
use viewuq_core::Error;

/// PCP axis order.
pub const PCP_AXES: [&str; 6] = ["mc_uncertainty", "mc_error", "mc_error_std", "ens_uncertainty", "ens_error", "ens_error_std"];

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": { "code": code, "message": message.into() } }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::error(400, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::error(404, "not_found", message)
    }
}

type Handled = std::result::Result<Response, Response>;

/// Sweeps live in `root/{dataset_id}`; the 1-D demo output, when present,
/// in `demo_dir`.
#[derive(Clone, Debug)]
pub struct Api {
    root: PathBuf,
    demo_dir: Option<PathBuf>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && id != "." && id != ".."
}

fn param<'a>(query: &'a HashMap<String, String>, name: &str) -> std::result::Result<&'a str, Response> {
    query
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| Response::bad_request(format!("missing query parameter `{name}`")))
}

fn parsed<T: std::str::FromStr>(query: &HashMap<String, String>, name: &str) -> std::result::Result<T, Response>
where
    T::Err: std::fmt::Display,
{
    let raw = param(query, name)?;
    raw.parse()
        .map_err(|e| Response::bad_request(format!("parameter `{name}` = `{raw}`: {e}")))
}

fn record_json(r: &SweepRecord) -> Value {
    let values = r.to_f32s();
    let fields: serde_json::Map<String, Value> = RECORD_FIELDS
        .iter()
        .zip(values)
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    Value::Object(fields)
}

impl Api {
    pub fn new(root: impl Into<PathBuf>, demo_dir: Option<PathBuf>) -> Self {
        Self {
            root: root.into(),
            demo_dir,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Dispatches one request. `query` holds decoded query parameters and
    /// `body` the raw request body.
    pub fn handle(&self, method: &str, path: &str, query: &HashMap<String, String>, body: &[u8]) -> Response {
        let result = match (method, path.trim_end_matches('/')) {
            ("GET", "/datasets") => self.datasets(),
            ("GET", "/heatmap") => self.heatmap(query),
            ("GET", "/view") => self.view(query),
            ("POST", "/select") => self.select(body),
            ("GET", "/pcp") => self.pcp(query),
            ("GET", "/sensitivity") => self.sensitivity(query),
            ("GET", "/demo1d") => self.demo1d(),
            (_, "/datasets" | "/heatmap" | "/view" | "/select" | "/pcp" | "/sensitivity" | "/demo1d") => {
                Err(Response::error(405, "method_not_allowed", format!("{method} not allowed on {path}")))
            }
            _ => Err(Response::not_found(format!("no route {path}"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn open(&self, dataset: &str) -> std::result::Result<SweepData, Response> {
        if !valid_id(dataset) || !self.root.join(dataset).join(MANIFEST_FILE).is_file() {
            return Err(Response::not_found(format!("unknown dataset `{dataset}`")));
        }
        SweepData::open(&self.root.join(dataset)).map_err(|e| match e {
            Error::IncompleteSweep(_) => Response::error(409, "incomplete_sweep", format!("sweep `{dataset}` is not complete")),
            other => Response::error(500, "internal", other.to_string()),
        })
    }

    fn datasets(&self) -> Handled {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.root).map_err(|e| Response::error(500, "internal", e.to_string()))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST_FILE).is_file())
            .filter_map(|e| e.file_name().to_str().map(String::from))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        for id in ids {
            let path = self.root.join(&id).join(MANIFEST_FILE);
            let manifest: Value = std::fs::read(&path)
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok())
                .ok_or_else(|| Response::error(500, "internal", format!("unreadable manifest for `{id}`")))?;
            out.push(json!({
                "id": id,
                "grid": manifest["grid"],
                "complete": manifest["complete"],
                "volume_id": manifest["volume_id"],
                "tf_id": manifest["tf_id"],
            }));
        }
        Ok(Response::ok(json!({ "datasets": out })))
    }

    fn grid_response(data: &SweepData, dataset: &str, method: Method, quantity: Quantity, channel: Channel) -> Handled {
        let h = heatmap_grid(data.records(), data.grid(), method, quantity, channel)
            .map_err(|e| Response::bad_request(e.to_string()))?;
        Ok(Response::ok(json!({
            "dataset": dataset,
            "method": method,
            "quantity": quantity,
            "channel": channel,
            "n_theta": h.grid.n_theta(),
            "n_phi": h.grid.n_phi(),
            "layout": "phi-major",
            "min": h.min,
            "max": h.max,
            "values": h.values,
        })))
    }

    fn heatmap(&self, q: &HashMap<String, String>) -> Handled {
        let dataset = param(q, "dataset")?;
        let method: Method = parsed(q, "method")?;
        let quantity: Quantity = parsed(q, "quantity")?;
        let channel: Channel = if q.contains_key("channel") { parsed(q, "channel")? } else { Channel::Combined };
        let data = self.open(dataset)?;
        Self::grid_response(&data, dataset, method, quantity, channel)
    }

    fn sensitivity(&self, q: &HashMap<String, String>) -> Handled {
        let dataset = param(q, "dataset")?;
        let method: Method = parsed(q, "method")?;
        let quantity = match q.get("stat").map_or("mean", String::as_str) {
            "mean" => Quantity::Sensitivity,
            "std" => Quantity::SensitivityStd,
            other => return Err(Response::bad_request(format!("stat `{other}` is not mean or std"))),
        };
        let data = self.open(dataset)?;
        Self::grid_response(&data, dataset, method, quantity, Channel::Combined)
    }

    fn cell_record(data: &SweepData, i: usize, j: usize) -> std::result::Result<&SweepRecord, Response> {
        data.record(i, j)
            .map_err(|_| Response::not_found(format!("cell ({i}, {j}) outside the {} grid", data.grid())))
    }

    fn view(&self, q: &HashMap<String, String>) -> Handled {
        let dataset = param(q, "dataset")?;
        let i: usize = parsed(q, "i")?;
        let j: usize = parsed(q, "j")?;
        let data = self.open(dataset)?;
        let record = Self::cell_record(&data, i, j)?;
        let images: BTreeMap<String, String> = data
            .image_paths(i, j)
            .map_err(|e| Response::not_found(e.to_string()))?
            .into_iter()
            .map(|(name, rel)| (name, format!("/files/{dataset}/{rel}")))
            .collect();
        let scales = if data.manifest().images.is_empty() {
            Value::Null
        } else {
            json!(format!("/files/{dataset}/{}/scales.json", data.manifest().image_dir(i, j)))
        };
        Ok(Response::ok(json!({
            "dataset": dataset,
            "i": i,
            "j": j,
            "theta": record.theta,
            "phi": record.phi,
            "record": record_json(record),
            "images": images,
            "scales": scales,
        })))
    }

    fn select(&self, body: &[u8]) -> Handled {
        #[derive(Deserialize)]
        struct Select {
            dataset: String,
            cells: Vec<(usize, usize)>,
            #[serde(default)]
            method: Option<String>,
        }
        let req: Select = serde_json::from_slice(body).map_err(|e| Response::bad_request(format!("select body: {e}")))?;
        let method: Method = req
            .method
            .as_deref()
            .unwrap_or("mc")
            .parse()
            .map_err(|e: Error| Response::bad_request(e.to_string()))?;
        let data = self.open(&req.dataset)?;
        let mut picked = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &req.cells {
            let r = Self::cell_record(&data, i, j)?;
            if seen.insert((j, i)) {
                picked.push((i, j, r));
            }
        }
        // Descending combined uncertainty; ties keep grid order.
        picked.sort_by(|a, b| {
            let (ua, ub) = (a.2.method(method).uncertainty[3], b.2.method(method).uncertainty[3]);
            ub.total_cmp(&ua).then((a.1, a.0).cmp(&(b.1, b.0)))
        });
        let records: Vec<Value> = picked
            .iter()
            .map(|(i, j, r)| json!({ "i": i, "j": j, "record": record_json(r) }))
            .collect();
        Ok(Response::ok(json!({ "dataset": req.dataset, "ranked_by": format!("{method}.uncertainty.combined"), "records": records })))
    }

    fn pcp(&self, q: &HashMap<String, String>) -> Handled {
        let dataset = param(q, "dataset")?;
        let data = self.open(dataset)?;
        let grid = data.grid();
        let tuples: Vec<Value> = data
            .records()
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let (i, j) = grid.cell(k);
                json!({ "i": i, "j": j, "values": r.pcp_tuple() })
            })
            .collect();
        Ok(Response::ok(json!({ "dataset": dataset, "axes": PCP_AXES, "tuples": tuples })))
    }

    fn demo1d(&self) -> Handled {
        let dir = self
            .demo_dir
            .as_ref()
            .filter(|d| d.join(MC_CSV).is_file())
            .ok_or_else(|| Response::not_found("no 1-D demo output configured"))?;
        let mut out = serde_json::Map::new();
        for file in [MC_CSV, ENSEMBLE_CSV] {
            let env = read_envelope(&dir.join(file)).map_err(|e| Response::error(500, "internal", e.to_string()))?;
            let rows: Vec<Value> = (0..env.xs.len())
                .map(|k| json!({ "x": env.xs[k], "mean": env.mean[k], "std": env.std[k] }))
                .collect();
            out.insert(env.method.clone(), Value::Array(rows));
        }
        Ok(Response::ok(Value::Object(out)))
    }

    /// Resolves `/files/{dataset}/{rest}` to a file inside a complete sweep;
    /// `None` for anything else, including paths that leave the directory.
    pub fn file_path(&self, dataset: &str, rest: &str) -> Option<PathBuf> {
        if !valid_id(dataset) {
            return None;
        }
        let rel = Path::new(rest);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return None;
        }
        let dir = self.root.join(dataset);
        SweepData::open(&dir).ok()?;
        let path = dir.join(rel);
        path.is_file().then_some(path)
    }
}
