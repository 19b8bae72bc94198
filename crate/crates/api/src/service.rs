//! Request logic, independent of the HTTP layer. Every method is blocking
//! and is run on the blocking thread pool by the router.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use chrono::Utc;
use matcontrib_core::builder::{
    build_material, default_layout, BuildContext, DerivedMaterialDoc, PlotKind, PlotLayout,
    PlotPublisher,
};
use matcontrib_core::identifier::classify;
use matcontrib_core::pipeline::{new_cid, Cid, Contribution, Visibility};
use matcontrib_core::refs::Resolver;
use matcontrib_core::store::{Filter, Store, StoreError};
use matcontrib_core::submission::{materialize, prepare};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::keys::ApiKeys;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Created,
    Updated,
    Deleted,
}

/// One line of a submission or deletion response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionItem {
    pub cid: Cid,
    pub material: String,
    pub title: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct QueryParams {
    pub material: Option<String>,
    pub project: Option<String>,
    pub key: Option<String>,
    pub visibility: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutPatch {
    pub title: Option<String>,
    pub x_label: Option<String>,
    pub y_label: Option<String>,
    pub kind: Option<PlotKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotCustomization {
    pub plot_id: String,
    #[serde(default)]
    pub layout: LayoutPatch,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRequest {
    pub visibility: Option<Visibility>,
    pub plot_customized: Option<PlotCustomization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub rebuilt: usize,
}

pub struct Service {
    store: Store,
    keys: ApiKeys,
    resolver: Resolver,
    publisher: Option<Box<dyn PlotPublisher>>,
    submissions: Mutex<()>,
    builds: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn visible(project: &str, visibility: Visibility, caller: Option<&str>) -> bool {
    visibility == Visibility::Public || caller == Some(project)
}

fn canonical(material: &str) -> Option<String> {
    classify(material).ok().map(|m| m.canonical_key())
}

fn parse_cid(raw: &str) -> Result<Cid, ApiError> {
    Cid::parse(raw).ok_or_else(|| ApiError::not_found(format!("contribution {raw}")))
}

impl Service {
    pub fn new(store: Store, keys: ApiKeys) -> Service {
        Service {
            store,
            keys,
            resolver: Resolver::offline(),
            publisher: None,
            submissions: Mutex::new(()),
            builds: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_resolver(mut self, resolver: Resolver) -> Service {
        self.resolver = resolver;
        self
    }

    pub fn with_publisher(mut self, publisher: Box<dyn PlotPublisher>) -> Service {
        self.publisher = Some(publisher);
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Project of the caller; `None` for anonymous requests.
    pub fn authenticate(&self, key: Option<&str>) -> Result<Option<String>, ApiError> {
        match key {
            None => Ok(None),
            Some(k) => self
                .keys
                .project(k)
                .map(|p| Some(p.to_string()))
                .ok_or_else(ApiError::unauthorized),
        }
    }

    fn require(&self, key: Option<&str>) -> Result<String, ApiError> {
        self.authenticate(key)?.ok_or_else(ApiError::unauthorized)
    }

    fn material_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.builds
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    /// Re-aggregates one material. Returns whether a derived document
    /// existed before or after the build.
    pub fn rebuild(&self, key: &str) -> Result<bool, ApiError> {
        let lock = self.material_lock(key);
        let _held = lock.lock().unwrap();
        let contributions = self.store.contributions_for(key)?;
        let previous = match self.store.get_derived(key) {
            Ok(d) => Some(d),
            Err(StoreError::NotFound(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let ctx = BuildContext {
            resolver: self.resolver.clone(),
            publisher: self.publisher.as_deref(),
        };
        match build_material(key, &contributions, previous.as_ref(), &ctx, Utc::now())? {
            Some(doc) => {
                let unchanged = previous
                    .as_ref()
                    .is_some_and(|p| p.projects == doc.projects);
                if !unchanged {
                    self.store.put_derived(&doc)?;
                }
                Ok(true)
            }
            None => {
                self.store.delete_derived(key)?;
                Ok(previous.is_some())
            }
        }
    }

    fn rebuild_all(&self, keys: BTreeSet<String>) -> Result<usize, ApiError> {
        let mut n = 0;
        for key in keys {
            if self.rebuild(&key)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Validates a whole MPFile before writing any of it, then stores
    /// every contribution and rebuilds the affected materials.
    pub fn submit(
        &self,
        key: Option<&str>,
        claimed_project: Option<&str>,
        body: &[u8],
    ) -> Result<Vec<ActionItem>, ApiError> {
        let project = self.require(key)?;
        if let Some(claimed) = claimed_project {
            if claimed != project {
                return Err(ApiError::forbidden(format!(
                    "API key belongs to project '{project}', not '{claimed}'"
                )));
            }
        }
        let text = std::str::from_utf8(body)
            .map_err(|e| ApiError::bad_request("InvalidEncoding", format!("body is not UTF-8: {e}")))?;
        let prepared = prepare(text, &project)?;

        let _serial = self.submissions.lock().unwrap();
        let now = Utc::now();
        let mut taken: HashSet<Cid> = HashSet::new();
        let mut plan = Vec::with_capacity(prepared.len());
        for p in &prepared {
            let (cid, existing) = match &p.draft.cid {
                Some(cid) => {
                    if !taken.insert(cid.clone()) {
                        let mut err = ApiError::bad_request(
                            "DuplicateCid",
                            format!("cid {cid} appears twice in the file"),
                        );
                        err.body.line = Some(p.draft.line);
                        return Err(err);
                    }
                    match self.store.get_contribution(cid) {
                        Ok(c) if c.project != project => {
                            return Err(ApiError::forbidden(format!(
                                "contribution {cid} belongs to another project"
                            )))
                        }
                        Ok(c) => (cid.clone(), Some(c)),
                        Err(StoreError::NotFound(_)) => (cid.clone(), None),
                        Err(e) => return Err(e.into()),
                    }
                }
                None => {
                    let cid = new_cid(|c| taken.contains(c) || self.store.contains_cid(c))
                        .map_err(|e| ApiError::internal(e.to_string()))?;
                    taken.insert(cid.clone());
                    (cid, None)
                }
            };
            let contribution = materialize(p, cid, existing.as_ref(), now);
            plan.push((contribution, existing, p.warning()));
        }

        let mut written: Vec<(Cid, Option<Contribution>)> = Vec::new();
        for (c, existing, _) in &plan {
            let unchanged = existing.as_ref().is_some_and(|old| {
                old.content_hash == c.content_hash
                    && old.title == c.title
                    && old.material == c.material
                    && old.plots == c.plots
            });
            if unchanged {
                continue;
            }
            if let Err(e) = self.store.put_contribution(c) {
                self.roll_back(written);
                return Err(e.into());
            }
            written.push((c.cid.clone(), existing.clone()));
        }

        let mut affected = BTreeSet::new();
        let mut items = Vec::with_capacity(plan.len());
        for (c, existing, warning) in plan {
            affected.insert(c.material_key());
            if let Some(old) = &existing {
                affected.insert(old.material_key());
            }
            items.push(ActionItem {
                material: c.material_key(),
                title: c.title.clone(),
                action: if existing.is_some() {
                    Action::Updated
                } else {
                    Action::Created
                },
                warnings: warning.into_iter().collect(),
                cid: c.cid,
            });
        }
        self.rebuild_all(affected)?;
        Ok(items)
    }

    fn roll_back(&self, written: Vec<(Cid, Option<Contribution>)>) {
        for (cid, previous) in written.into_iter().rev() {
            let _ = match previous {
                Some(old) => self.store.put_contribution(&old).map(|_| ()),
                None => self.store.delete_contribution(&cid).map(|_| ()),
            };
        }
    }

    pub fn get_contribution(&self, key: Option<&str>, cid: &str) -> Result<Contribution, ApiError> {
        let caller = self.authenticate(key)?;
        let cid = parse_cid(cid)?;
        let c = self.store.get_contribution(&cid)?;
        if !visible(&c.project, c.visibility, caller.as_deref()) {
            return Err(ApiError::not_found(format!("contribution {cid}")));
        }
        Ok(c)
    }

    pub fn delete_contribution(&self, key: Option<&str>, cid: &str) -> Result<ActionItem, ApiError> {
        let project = self.require(key)?;
        let cid = parse_cid(cid)?;
        let _serial = self.submissions.lock().unwrap();
        let c = self.store.get_contribution(&cid)?;
        if c.project != project {
            return Err(ApiError::forbidden(format!(
                "contribution {cid} belongs to another project"
            )));
        }
        self.store.delete_contribution(&cid)?;
        self.rebuild(&c.material_key())?;
        Ok(ActionItem {
            material: c.material_key(),
            title: c.title,
            action: Action::Deleted,
            warnings: Vec::new(),
            cid,
        })
    }

    pub fn query(&self, key: Option<&str>, params: &QueryParams) -> Result<Vec<Contribution>, ApiError> {
        let caller = self.authenticate(key)?;
        let material = match &params.material {
            Some(m) => Some(canonical(m).ok_or_else(|| {
                ApiError::bad_request("InvalidQuery", format!("'{m}' is not a material identifier"))
            })?),
            None => None,
        };
        let visibility = match &params.visibility {
            Some(v) => Some(v.parse::<Visibility>().map_err(|_| {
                ApiError::bad_request("InvalidQuery", format!("visibility '{v}' is not public or private"))
            })?),
            None => None,
        };
        let filter = Filter {
            material,
            project: params.project.clone(),
            key_path: params.key.clone(),
            visibility,
        };
        Ok(self
            .store
            .query(&filter)?
            .into_iter()
            .filter(|c| visible(&c.project, c.visibility, caller.as_deref()))
            .collect())
    }

    /// The derived document restricted to what the caller may see.
    pub fn material(&self, key: Option<&str>, material: &str) -> Result<DerivedMaterialDoc, ApiError> {
        let caller = self.authenticate(key)?;
        let material_key =
            canonical(material).ok_or_else(|| ApiError::not_found(format!("material {material}")))?;
        let mut doc = self.store.get_derived(&material_key)?;
        for (project, group) in doc.projects.iter_mut() {
            group.retain(|c| visible(project, c.visibility, caller.as_deref()));
        }
        doc.projects.retain(|_, group| !group.is_empty());
        if doc.projects.is_empty() {
            return Err(ApiError::not_found(format!("material {material_key}")));
        }
        Ok(doc)
    }

    pub fn patch(&self, key: Option<&str>, cid: &str, body: &[u8]) -> Result<Contribution, ApiError> {
        let project = self.require(key)?;
        let request: PatchRequest = serde_json::from_slice(body)
            .map_err(|e| ApiError::bad_request("InvalidPatch", e.to_string()))?;
        if request.visibility.is_none() && request.plot_customized.is_none() {
            return Err(ApiError::bad_request(
                "InvalidPatch",
                "expected visibility or plot_customized",
            ));
        }
        let cid = parse_cid(cid)?;
        let _serial = self.submissions.lock().unwrap();
        let mut c = self.store.get_contribution(&cid)?;
        if c.project != project {
            return Err(ApiError::forbidden(format!(
                "contribution {cid} belongs to another project"
            )));
        }
        if let Some(custom) = &request.plot_customized {
            let rendered = self
                .store
                .get_derived(&c.material_key())
                .ok()
                .and_then(|d| d.find(&cid).cloned())
                .and_then(|d| d.plots.into_iter().find(|p| p.plot_id == custom.plot_id))
                .map(|p| p.layout);
            let spec = c
                .plots
                .iter_mut()
                .find(|s| s.plot_id == custom.plot_id)
                .ok_or_else(|| {
                    ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "UnknownPlot",
                        format!("contribution {cid} has no plot '{}'", custom.plot_id),
                    )
                })?;
            let base = spec
                .custom_layout
                .clone()
                .or(rendered)
                .unwrap_or_else(|| default_layout(spec));
            let patch = &custom.layout;
            spec.custom_layout = Some(PlotLayout {
                title: patch.title.clone().unwrap_or(base.title),
                x_label: patch.x_label.clone().unwrap_or(base.x_label),
                y_label: patch.y_label.clone().unwrap_or(base.y_label),
                kind: patch.kind.unwrap_or(base.kind),
            });
            spec.customized = true;
        }
        if let Some(v) = request.visibility {
            c.visibility = v;
        }
        c.updated_at = Utc::now();
        self.store.put_contribution(&c)?;
        self.rebuild(&c.material_key())?;
        Ok(c)
    }

    pub fn build(&self, key: Option<&str>, material: Option<&str>) -> Result<BuildSummary, ApiError> {
        self.require(key)?;
        let keys: BTreeSet<String> = match material {
            Some(m) => {
                let k = canonical(m).ok_or_else(|| ApiError::not_found(format!("material {m}")))?;
                let known = self.store.contributed_materials().contains(&k)
                    || self.store.list_materials().contains(&k);
                if !known {
                    return Err(ApiError::not_found(format!("material {k}")));
                }
                BTreeSet::from([k])
            }
            None => self
                .store
                .contributed_materials()
                .into_iter()
                .chain(self.store.list_materials())
                .collect(),
        };
        Ok(BuildSummary {
            rebuilt: self.rebuild_all(keys)?,
        })
    }

    pub fn projects(&self) -> Vec<String> {
        self.store.list_projects()
    }
}
