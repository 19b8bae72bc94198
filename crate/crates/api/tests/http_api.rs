use std::collections::BTreeMap;
use std::path::Path;

use matcontrib_api::{spawn, ApiKeys, RunningServer, Service};
use matcontrib_core::store::Store;
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

const EXAMPLE: &str = include_str!("../../core/tests/fixtures/example1.mpfile");
const DEMO: &str = "demo-key";
const OTHER: &str = "other-key";

struct Env {
    _dir: TempDir,
    data: std::path::PathBuf,
    server: RunningServer,
    client: Client,
}

impl Env {
    fn new() -> Env {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let store = Store::open(&data).unwrap();
        let keys = ApiKeys::from_pairs([(DEMO, "demo"), (OTHER, "other")]);
        let server = spawn(Service::new(store, keys), "127.0.0.1:0").unwrap();
        Env {
            _dir: dir,
            data,
            server,
            client: Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.server.url())
    }

    fn submit(&self, key: Option<&str>, body: impl Into<String>) -> Response {
        let mut req = self.client.post(self.url("/contributions")).body(body.into());
        if let Some(k) = key {
            req = req.header("X-API-Key", k);
        }
        req.send().unwrap()
    }

    fn get(&self, key: Option<&str>, path: &str) -> Response {
        let mut req = self.client.get(self.url(path));
        if let Some(k) = key {
            req = req.header("X-API-Key", k);
        }
        req.send().unwrap()
    }

    fn patch(&self, key: &str, cid: &str, body: Value) -> Response {
        self.client
            .patch(self.url(&format!("/contributions/{cid}")))
            .header("X-API-Key", key)
            .body(body.to_string())
            .send()
            .unwrap()
    }

    fn delete(&self, key: &str, cid: &str) -> Response {
        self.client
            .delete(self.url(&format!("/contributions/{cid}")))
            .header("X-API-Key", key)
            .send()
            .unwrap()
    }

    /// Submits the sample file under `demo` and returns the cids by material.
    fn seed(&self) -> BTreeMap<String, String> {
        let resp = self.submit(Some(DEMO), EXAMPLE);
        assert_eq!(resp.status(), StatusCode::CREATED);
        let items: Vec<Value> = resp.json().unwrap();
        items
            .iter()
            .map(|i| (i["material"].as_str().unwrap().to_string(), i["cid"].as_str().unwrap().to_string()))
            .collect()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        out.insert(entry.display().to_string(), std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(walk(&path));
        } else {
            files.push(path);
        }
    }
    files
}

fn embed(text: &str, cids: &BTreeMap<String, String>) -> String {
    text.replace(">>> MP-1 # caesium\n", &format!(">>> MP-1 # caesium\ncid: {}\n", cids["mp-1"]))
        .replace(">>> MP-2 # palladium\n", &format!(">>> MP-2 # palladium\ncid: {}\n", cids["mp-2"]))
}

fn error_of(resp: Response) -> Value {
    let body: Value = resp.json().unwrap();
    body["error"].clone()
}

#[test]
fn submission_creates_then_updates() {
    let env = Env::new();
    let resp = env.submit(Some(DEMO), EXAMPLE);
    assert_eq!(resp.status(), StatusCode::CREATED);
    let items: Vec<Value> = resp.json().unwrap();
    assert_eq!(items.len(), 2);
    assert!(items.iter().all(|i| i["action"] == "created"));
    assert_eq!(items[0]["material"], "mp-1");
    assert_eq!(items[1]["material"], "mp-2");
    let cids: BTreeMap<_, _> = items
        .iter()
        .map(|i| (i["material"].as_str().unwrap().to_string(), i["cid"].as_str().unwrap().to_string()))
        .collect();
    let before = env.get(Some(DEMO), &format!("/contributions/{}", cids["mp-1"])).json::<Value>().unwrap();

    let resp = env.submit(Some(DEMO), embed(EXAMPLE, &cids));
    assert_eq!(resp.status(), StatusCode::CREATED);
    let again: Vec<Value> = resp.json().unwrap();
    assert!(again.iter().all(|i| i["action"] == "updated"));
    assert_eq!(again[0]["cid"], cids["mp-1"].as_str());
    assert_eq!(again[1]["cid"], cids["mp-2"].as_str());
    let after = env.get(Some(DEMO), &format!("/contributions/{}", cids["mp-1"])).json::<Value>().unwrap();
    assert_eq!(before["content_hash"], after["content_hash"]);
    assert_eq!(before["created_at"], after["created_at"]);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let env = Env::new();
    let resp = env.submit(Some(DEMO), ">>>> orphan");
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let err = error_of(resp);
    assert_eq!(err["code"], "DepthJump");
    assert_eq!(err["line"], 1);
}

#[test]
fn keys_are_checked() {
    let env = Env::new();
    assert_eq!(env.submit(None, EXAMPLE).status(), StatusCode::UNAUTHORIZED);
    let resp = env.submit(Some("wrong"), EXAMPLE);
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(error_of(resp)["code"], "Unauthorized");
    let resp = env
        .client
        .post(env.url("/contributions"))
        .header("X-API-Key", DEMO)
        .header("X-Project", "other")
        .body(EXAMPLE)
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
    assert!(walk(&env.data).iter().all(|p| !p.to_string_lossy().ends_with(".json")));
}

#[test]
fn rejected_files_leave_the_store_untouched() {
    let env = Env::new();
    env.seed();
    let before = snapshot(&env.data);
    let bad = format!("{EXAMPLE}\n>>> MP-3\nx,y\n1,2\n3\n");
    assert_eq!(env.submit(Some(DEMO), bad).status(), StatusCode::BAD_REQUEST);
    let unknown_plot = ">>> mp-4\nx,y\n1,2\n>>>> plots\n>>>>> extra\ntable: missing\n";
    assert_eq!(env.submit(Some(DEMO), unknown_plot).status(), StatusCode::BAD_REQUEST);
    assert_eq!(snapshot(&env.data), before);
}

#[test]
fn foreign_cids_cannot_be_overwritten() {
    let env = Env::new();
    let cids = env.seed();
    let before = snapshot(&env.data);
    let resp = env.submit(Some(OTHER), embed(EXAMPLE, &cids));
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
    assert_eq!(snapshot(&env.data), before);
}

#[test]
fn query_contract() {
    let env = Env::new();
    let cids = env.seed();
    let found: Vec<Value> = env
        .get(Some(DEMO), "/contributions?key=physical%20properties.melting%20point")
        .json()
        .unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0]["cid"], cids["mp-1"].as_str());

    let found: Vec<Value> = env.get(Some(DEMO), "/contributions?material=MP-2").json().unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0]["cid"], cids["mp-2"].as_str());

    let found: Vec<Value> = env.get(Some(DEMO), "/contributions?project=nobody").json().unwrap();
    assert!(found.is_empty());

    // private contributions stay hidden from others
    let found: Vec<Value> = env.get(None, "/contributions?project=demo").json().unwrap();
    assert!(found.is_empty());

    let resp = env.get(Some(DEMO), "/contributions");
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert_eq!(error_of(resp)["code"], "EmptyFilter");
    assert_eq!(env.get(Some(DEMO), "/contributions?material=Xx2").status(), StatusCode::BAD_REQUEST);
}

#[test]
fn material_documents_respect_visibility() {
    let env = Env::new();
    let cids = env.seed();
    assert_eq!(env.get(None, "/materials/mp-1").status(), StatusCode::NOT_FOUND);

    let doc: Value = env.get(Some(DEMO), "/materials/mp-1").json().unwrap();
    assert_eq!(doc["projects"].as_object().unwrap().len(), 1);
    let c = &doc["projects"]["demo"][0];
    assert_eq!(c["tree"]["physical properties"]["melting point"], "301.7 K");
    assert_eq!(c["plots"].as_array().unwrap().len(), 2);

    let doc: Value = env.get(Some(DEMO), "/materials/mp-2").json().unwrap();
    assert_eq!(doc["projects"]["demo"][0]["tables"]["data"]["rows"].as_array().unwrap().len(), 6);
    assert_eq!(env.get(Some(DEMO), "/materials/mp-9").status(), StatusCode::NOT_FOUND);
    assert_eq!(env.get(Some(OTHER), "/materials/mp-1").status(), StatusCode::NOT_FOUND);

    let resp = env.patch(DEMO, &cids["mp-1"], json!({"visibility": "public"}));
    assert_eq!(resp.status(), StatusCode::OK);
    let doc: Value = env.get(None, "/materials/mp-1").json().unwrap();
    assert_eq!(doc["projects"]["demo"][0]["cid"], cids["mp-1"].as_str());
    assert_eq!(env.get(None, &format!("/contributions/{}", cids["mp-1"])).status(), StatusCode::OK);
    assert_eq!(env.get(None, &format!("/contributions/{}", cids["mp-2"])).status(), StatusCode::NOT_FOUND);
}

#[test]
fn patch_rules() {
    let env = Env::new();
    let cids = env.seed();
    let cid = &cids["mp-1"];
    let resp = env.patch(DEMO, cid, json!({"plot_customized": {"plot_id": "nope", "layout": {}}}));
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(resp)["code"], "UnknownPlot");
    assert_eq!(env.patch(OTHER, cid, json!({"visibility": "public"})).status(), StatusCode::FORBIDDEN);
    assert_eq!(env.patch(DEMO, cid, json!({})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(env.patch(DEMO, cid, json!({"visibility": "hidden"})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(
        env.patch(DEMO, "0123456789abcdef01234567", json!({"visibility": "public"})).status(),
        StatusCode::NOT_FOUND
    );

    let resp = env.patch(
        DEMO,
        cid,
        json!({"plot_customized": {"plot_id": "default-table-2", "layout": {"title": "IE by shell"}}}),
    );
    assert_eq!(resp.status(), StatusCode::OK);
    let doc: Value = env.get(Some(DEMO), "/materials/mp-1").json().unwrap();
    let plot = &doc["projects"]["demo"][0]["plots"][1];
    assert_eq!(plot["layout"]["title"], "IE by shell");
    assert_eq!(plot["layout"]["kind"], "bar");
    assert_eq!(plot["layout"]["x_label"], "configuration");
}

#[test]
fn customization_survives_data_edits() {
    let env = Env::new();
    let cids = env.seed();
    let resp = env.patch(
        DEMO,
        &cids["mp-1"],
        json!({"plot_customized": {"plot_id": "default-table-2", "layout": {"title": "IE", "y_label": "kJ/mol"}}}),
    );
    assert_eq!(resp.status(), StatusCode::OK);
    let edited = embed(EXAMPLE, &cids).replace("1,375.7,6s1/2", "1,376.0,6s1/2");
    assert_eq!(env.submit(Some(DEMO), edited).status(), StatusCode::CREATED);
    let doc: Value = env.get(Some(DEMO), "/materials/mp-1").json().unwrap();
    let plot = &doc["projects"]["demo"][0]["plots"][1];
    assert_eq!(plot["layout"]["title"], "IE");
    assert_eq!(plot["layout"]["y_label"], "kJ/mol");
    assert_eq!(plot["series"][0]["y"][0], 376.0);
}

#[test]
fn deletion_rules() {
    let env = Env::new();
    let cids = env.seed();
    let cid = &cids["mp-2"];
    assert_eq!(env.delete(OTHER, cid).status(), StatusCode::FORBIDDEN);
    let resp = env.delete(DEMO, cid);
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.json::<Value>().unwrap()["action"], "deleted");
    assert_eq!(env.get(Some(DEMO), &format!("/contributions/{cid}")).status(), StatusCode::NOT_FOUND);
    assert_eq!(env.get(Some(DEMO), "/materials/mp-2").status(), StatusCode::NOT_FOUND);
    assert_eq!(env.delete(DEMO, cid).status(), StatusCode::NOT_FOUND);
    let resp = env.client.delete(env.url(&format!("/contributions/{}", cids["mp-1"]))).send().unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
}

#[test]
fn builds_and_projects() {
    let env = Env::new();
    env.seed();
    let build = |q: &str, key: Option<&str>| {
        let mut req = env.client.post(env.url(&format!("/build{q}")));
        if let Some(k) = key {
            req = req.header("X-API-Key", k);
        }
        req.send().unwrap()
    };
    let resp = build("", Some(DEMO));
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    assert_eq!(resp.json::<Value>().unwrap()["rebuilt"], 2);
    let resp = build("?material=MP-1", Some(DEMO));
    assert_eq!(resp.json::<Value>().unwrap()["rebuilt"], 1);
    assert_eq!(build("?material=mp-9", Some(DEMO)).status(), StatusCode::NOT_FOUND);
    assert_eq!(build("", None).status(), StatusCode::UNAUTHORIZED);

    let projects: Vec<String> = env.get(None, "/projects").json().unwrap();
    assert_eq!(projects, ["demo"]);
    assert_eq!(env.get(None, "/nowhere").status(), StatusCode::NOT_FOUND);
}

fn sized_file(material: &str, target: usize) -> String {
    let mut text = format!(">>> {material}\n>>>> data\nx,y\n");
    let mut i = 0u64;
    while text.len() < target {
        text.push_str(&format!("{i},{}\n", i * 7));
        i += 1;
    }
    text
}

#[test]
fn size_policy() {
    let env = Env::new();
    let resp = env.submit(Some(DEMO), sized_file("mp-20", 150 * 1024));
    assert_eq!(resp.status(), StatusCode::CREATED);
    let items: Vec<Value> = resp.json().unwrap();
    assert!(items[0].get("warnings").is_none());

    let resp = env.submit(Some(DEMO), sized_file("mp-21", 500 * 1024));
    assert_eq!(resp.status(), StatusCode::CREATED);
    let items: Vec<Value> = resp.json().unwrap();
    assert_eq!(items[0]["warnings"].as_array().unwrap().len(), 1);

    let before = snapshot(&env.data);
    let resp = env.submit(Some(DEMO), sized_file("mp-22", 2 * 1024 * 1024));
    assert_eq!(resp.status(), StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_of(resp)["code"], "OversizeContribution");
    assert_eq!(snapshot(&env.data), before);
}

#[test]
fn shared_general_reaches_each_material() {
    let env = Env::new();
    let text = ">>> general\nunit: K\n\n>>> mp-30\nT: 300\n\n>>> Fe2O4\n>>>> general\nunit: eV\n";
    let items: Vec<Value> = env.submit(Some(DEMO), text).json().unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(items[1]["material"], "FeO2");
    let doc: Value = env.get(Some(DEMO), "/materials/FeO2").json().unwrap();
    assert_eq!(doc["projects"]["demo"][0]["tree"]["general"]["unit"], "eV");
    let doc: Value = env.get(Some(DEMO), "/materials/mp-30").json().unwrap();
    assert_eq!(doc["projects"]["demo"][0]["tree"]["general"]["unit"], "K");
}
