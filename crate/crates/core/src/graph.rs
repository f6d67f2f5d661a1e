//! The semantic map: a directed graph of room and object nodes.
//!
//! Rooms are floor polygons loaded from a room file and connected by
//! undirected navigation edges. Objects carry a label, a tracked map-frame
//! position and exactly one containment edge to the room whose polygon
//! holds them (nearest room when outside every polygon). Relation edges
//! between objects are directed, predicate-labeled and probability-gated.
//!
//! Exports are deterministic: JSON with sorted keys and id-sorted node and
//! edge arrays, and a Graphviz DOT rendering.

use crate::geometry::Point3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("room file parse error: {0}")]
    Parse(String),
    #[error("invalid polygon for room {room}: {reason}")]
    InvalidPolygon { room: String, reason: String },
    #[error("connection references unknown room {0}")]
    UnknownRoomInConnection(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("map has no rooms")]
    NoRooms,
    #[error("unknown object {0}")]
    UnknownObject(u64),
    #[error("unknown relation endpoint {0}")]
    UnknownEndpoint(u64),
    #[error("relation source and target must differ")]
    SelfRelation,
    #[error("unknown room {0}")]
    UnknownRoom(String),
    #[error("no path between {from} and {to}")]
    NoPath { from: String, to: String },
}

/// Floor region with a simple polygon boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub id: String,
    pub name: String,
    /// Ordered (x, y) vertices in map-frame meters.
    pub polygon: Vec<[f64; 2]>,
}

/// Physical object tracked in the map.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: u64,
    pub label: String,
    pub position: Point3,
    /// Axis-aligned extent in meters, when known.
    pub dimensions: Option<[f64; 3]>,
    pub last_seen: u64,
    /// Consecutive frames the object went unobserved while expected.
    pub misses: u32,
}

/// Directed, probability-weighted edge between two objects.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEdge {
    pub source: u64,
    pub target: u64,
    pub predicate: String,
    pub probability: f64,
    pub last_seen: u64,
}

/// Outcome of a relation upsert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationOutcome {
    Inserted,
    /// Probability fell below the threshold; the map is unchanged.
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    rooms: BTreeMap<String, RoomNode>,
    /// Normalized (smaller id first) undirected room pairs.
    connections: BTreeSet<(String, String)>,
    objects: BTreeMap<u64, ObjectNode>,
    /// Object id -> containing room id. Total and unique per object.
    containment: BTreeMap<u64, String>,
    relations: BTreeMap<(u64, u64, String), RelationEdge>,
    next_object_id: u64,
    revision: u64,
    in_batch: bool,
}

/// On-disk room file: `{"rooms":[...],"connections":[["r1","r2"],...]}`.
#[derive(Serialize, Deserialize)]
struct RoomFile {
    rooms: Vec<RoomNode>,
    #[serde(default)]
    connections: Vec<[String; 2]>,
}

impl SemanticMap {
    /// Builds a map (rooms and connections only) from room-file JSON.
    pub fn load_rooms(json_text: &str) -> Result<SemanticMap, GraphError> {
        let file: RoomFile = serde_json::from_str(json_text).map_err(|e| GraphError::Parse(e.to_string()))?;
        if file.rooms.is_empty() {
            return Err(GraphError::InvalidInput("a map needs at least one room".into()));
        }
        let mut rooms = BTreeMap::new();
        for room in file.rooms {
            validate_polygon(&room)?;
            if rooms.insert(room.id.clone(), room.clone()).is_some() {
                return Err(GraphError::InvalidInput(format!("duplicate room id {}", room.id)));
            }
        }
        let mut connections = BTreeSet::new();
        for [a, b] in file.connections {
            if !rooms.contains_key(&a) {
                return Err(GraphError::UnknownRoomInConnection(a));
            }
            if !rooms.contains_key(&b) {
                return Err(GraphError::UnknownRoomInConnection(b));
            }
            if a == b {
                return Err(GraphError::InvalidInput(format!("self-connection on room {a}")));
            }
            connections.insert(normalize_pair(&a, &b));
        }
        Ok(SemanticMap {
            rooms,
            connections,
            objects: BTreeMap::new(),
            containment: BTreeMap::new(),
            relations: BTreeMap::new(),
            next_object_id: 1,
            revision: 0,
            in_batch: false,
        })
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn room_ids(&self) -> impl Iterator<Item = &str> {
        self.rooms.keys().map(String::as_str)
    }

    pub fn room(&self, id: &str) -> Option<&RoomNode> {
        self.rooms.get(id)
    }

    pub fn object(&self, id: u64) -> Option<&ObjectNode> {
        self.objects.get(&id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectNode> {
        self.objects.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationEdge> {
        self.relations.values()
    }

    pub fn room_of(&self, object_id: u64) -> Option<&str> {
        self.containment.get(&object_id).map(String::as_str)
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn connection_count(&self) -> usize {
        self.connections.len()
    }

    /// Starts a frame-scoped mutation batch: the revision is bumped once at
    /// [`SemanticMap::commit_frame`] instead of per operation.
    pub fn begin_frame(&mut self) {
        debug_assert!(!self.in_batch, "nested frame batch");
        self.in_batch = true;
    }

    pub fn commit_frame(&mut self) {
        debug_assert!(self.in_batch, "commit without begin");
        self.in_batch = false;
        self.revision += 1;
    }

    fn bump(&mut self) {
        if !self.in_batch {
            self.revision += 1;
        }
    }

    /// Room owning a map position: the room whose polygon contains the
    /// (x, y) footprint (boundary counts as inside; ties resolve to the
    /// lexicographically smallest id), else the room with the nearest
    /// boundary.
    pub fn assign_room(&self, p: &Point3) -> Result<&str, GraphError> {
        if self.rooms.is_empty() {
            return Err(GraphError::NoRooms);
        }
        let q = [p.x, p.y];
        for (id, room) in &self.rooms {
            if polygon_contains(&room.polygon, q) {
                return Ok(id);
            }
        }
        let mut best: Option<(f64, &str)> = None;
        for (id, room) in &self.rooms {
            let d = polygon_distance(&room.polygon, q);
            match best {
                Some((bd, _)) if d >= bd => {}
                _ => best = Some((d, id)),
            }
        }
        Ok(best.expect("at least one room").1)
    }

    /// Inserts a new object with a fresh monotonic id and a containment
    /// edge computed from its position.
    pub fn upsert_object(&mut self, label: &str, position: Point3, frame_idx: u64) -> Result<u64, GraphError> {
        let room = self.assign_room(&position)?.to_owned();
        let id = self.next_object_id;
        self.next_object_id += 1;
        self.objects.insert(
            id,
            ObjectNode { id, label: label.to_owned(), position, dimensions: None, last_seen: frame_idx, misses: 0 },
        );
        self.containment.insert(id, room);
        self.bump();
        Ok(id)
    }

    /// Moves an existing object: containment is recomputed, the miss
    /// counter resets (this is an observation).
    pub fn update_object(&mut self, id: u64, position: Point3, frame_idx: u64) -> Result<(), GraphError> {
        let room = self.assign_room(&position)?.to_owned();
        let node = self.objects.get_mut(&id).ok_or(GraphError::UnknownObject(id))?;
        node.position = position;
        node.last_seen = frame_idx;
        node.misses = 0;
        self.containment.insert(id, room);
        self.bump();
        Ok(())
    }

    /// Bumps an object's consecutive-miss counter, returning the new value.
    pub fn record_miss(&mut self, id: u64) -> Result<u32, GraphError> {
        let node = self.objects.get_mut(&id).ok_or(GraphError::UnknownObject(id))?;
        node.misses += 1;
        let misses = node.misses;
        self.bump();
        Ok(misses)
    }

    pub fn set_dimensions(&mut self, id: u64, dimensions: [f64; 3]) -> Result<(), GraphError> {
        let node = self.objects.get_mut(&id).ok_or(GraphError::UnknownObject(id))?;
        node.dimensions = Some(dimensions);
        self.bump();
        Ok(())
    }

    /// Inserts or replaces a relation edge when the probability clears the
    /// threshold; re-observations overwrite (latest wins).
    pub fn upsert_relation(
        &mut self,
        source: u64,
        target: u64,
        predicate: &str,
        probability: f64,
        frame_idx: u64,
        threshold: f64,
    ) -> Result<RelationOutcome, GraphError> {
        if source == target {
            return Err(GraphError::SelfRelation);
        }
        if !self.objects.contains_key(&source) {
            return Err(GraphError::UnknownEndpoint(source));
        }
        if !self.objects.contains_key(&target) {
            return Err(GraphError::UnknownEndpoint(target));
        }
        if probability < threshold {
            return Ok(RelationOutcome::Rejected);
        }
        self.relations.insert(
            (source, target, predicate.to_owned()),
            RelationEdge { source, target, predicate: predicate.to_owned(), probability, last_seen: frame_idx },
        );
        self.bump();
        Ok(RelationOutcome::Inserted)
    }

    /// Removes an object together with its containment edge and every
    /// incident relation edge.
    pub fn remove_object(&mut self, id: u64) -> Result<(), GraphError> {
        if self.objects.remove(&id).is_none() {
            return Err(GraphError::UnknownObject(id));
        }
        self.containment.remove(&id);
        self.relations.retain(|_, e| e.source != id && e.target != id);
        self.bump();
        Ok(())
    }

    /// Hop-count shortest path over room connections; among equal-length
    /// paths the lexicographically smallest id sequence wins.
    pub fn room_path(&self, from: &str, to: &str) -> Result<Vec<String>, GraphError> {
        if !self.rooms.contains_key(from) {
            return Err(GraphError::UnknownRoom(from.to_owned()));
        }
        if !self.rooms.contains_key(to) {
            return Err(GraphError::UnknownRoom(to.to_owned()));
        }
        if from == to {
            return Ok(vec![from.to_owned()]);
        }
        let mut adjacency: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (a, b) in &self.connections {
            adjacency.entry(a).or_default().insert(b);
            adjacency.entry(b).or_default().insert(a);
        }
        // BFS from the target gives distance-to-target; walking greedily
        // downhill picking the smallest id yields the lexicographically
        // smallest shortest path.
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        dist.insert(to, 0);
        let mut queue = VecDeque::from([to]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur];
            if let Some(neighbors) = adjacency.get(cur) {
                for &n in neighbors {
                    if !dist.contains_key(n) {
                        dist.insert(n, d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        if !dist.contains_key(from) {
            return Err(GraphError::NoPath { from: from.to_owned(), to: to.to_owned() });
        }
        let mut path = vec![from.to_owned()];
        let mut cur = from;
        while cur != to {
            let d = dist[cur];
            let next = adjacency
                .get(cur)
                .and_then(|ns| ns.iter().find(|n| dist.get(**n).is_some_and(|nd| nd + 1 == d)))
                .expect("downhill neighbor exists on a reachable path");
            path.push((*next).to_owned());
            cur = next;
        }
        Ok(path)
    }

    /// Ids of objects contained in a room, ascending.
    pub fn objects_in_room(&self, room: &str) -> Result<Vec<u64>, GraphError> {
        if !self.rooms.contains_key(room) {
            return Err(GraphError::UnknownRoom(room.to_owned()));
        }
        Ok(self.containment.iter().filter(|(_, r)| r.as_str() == room).map(|(&id, _)| id).collect())
    }

    /// Ids of objects with exactly this label (case-sensitive), ascending.
    pub fn find_objects(&self, label: &str) -> Vec<u64> {
        self.objects.values().filter(|o| o.label == label).map(|o| o.id).collect()
    }

    /// Immutable deep copy tagged with the current revision.
    pub fn snapshot(&self) -> SemanticMap {
        let mut copy = self.clone();
        copy.in_batch = false;
        copy
    }

    /// Deterministic JSON export: sorted keys, id-sorted arrays.
    pub fn export_json(&self) -> Vec<u8> {
        let rooms: Vec<Value> = self
            .rooms
            .values()
            .map(|r| {
                json_sorted(vec![
                    ("id", json!(r.id)),
                    ("name", json!(r.name)),
                    ("polygon", json!(r.polygon)),
                ])
            })
            .collect();
        let objects: Vec<Value> = self
            .objects
            .values()
            .map(|o| {
                let mut fields = vec![
                    ("id", json!(o.id)),
                    ("label", json!(o.label)),
                    ("position", json!([o.position.x, o.position.y, o.position.z])),
                    ("room", json!(self.containment[&o.id])),
                    ("last_seen", json!(o.last_seen)),
                ];
                if let Some(d) = o.dimensions {
                    fields.push(("dimensions", json!(d)));
                }
                json_sorted(fields)
            })
            .collect();
        let relations: Vec<Value> = self
            .relations
            .values()
            .map(|e| {
                json_sorted(vec![
                    ("source", json!(e.source)),
                    ("target", json!(e.target)),
                    ("predicate", json!(e.predicate)),
                    ("probability", json!(e.probability)),
                ])
            })
            .collect();
        let connections: Vec<Value> =
            self.connections.iter().map(|(a, b)| json!([a, b])).collect();
        let root = json_sorted(vec![
            ("revision", json!(self.revision)),
            ("rooms", Value::Array(rooms)),
            ("objects", Value::Array(objects)),
            ("relations", Value::Array(relations)),
            ("room_connections", Value::Array(connections)),
        ]);
        let mut bytes = serde_json::to_vec(&root).expect("serializable");
        bytes.push(b'\n');
        bytes
    }

    /// Graphviz DOT export: rooms as boxes, objects as ellipses, dashed
    /// containment edges, relation edges labeled `predicate (p=0.xx)`.
    pub fn export_dot(&self) -> Vec<u8> {
        let mut out = String::from("digraph semantic_map {\n");
        for room in self.rooms.values() {
            out.push_str(&format!(
                "  \"{}\" [shape=box, label=\"{} ({})\"];\n",
                room.id, room.name, room.id
            ));
        }
        for obj in self.objects.values() {
            out.push_str(&format!(
                "  \"obj{}\" [shape=ellipse, label=\"{} #{}\"];\n",
                obj.id, obj.label, obj.id
            ));
        }
        for (a, b) in &self.connections {
            out.push_str(&format!("  \"{a}\" -> \"{b}\" [dir=none];\n"));
        }
        for (id, room) in &self.containment {
            out.push_str(&format!("  \"obj{id}\" -> \"{room}\" [style=dashed];\n"));
        }
        for e in self.relations.values() {
            out.push_str(&format!(
                "  \"obj{}\" -> \"obj{}\" [label=\"{} (p={:.2})\"];\n",
                e.source, e.target, e.predicate, e.probability
            ));
        }
        out.push_str("}\n");
        out.into_bytes()
    }
}

fn normalize_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

fn json_sorted(fields: Vec<(&str, Value)>) -> Value {
    let mut sorted = fields;
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    Value::Object(sorted.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
}

const BOUNDARY_EPS: f64 = 1e-9;

fn validate_polygon(room: &RoomNode) -> Result<(), GraphError> {
    let poly = &room.polygon;
    let fail = |reason: &str| Err(GraphError::InvalidPolygon { room: room.id.clone(), reason: reason.to_owned() });
    if poly.len() < 3 {
        return fail("fewer than 3 vertices");
    }
    if poly.iter().flatten().any(|v| !v.is_finite()) {
        return fail("non-finite vertex");
    }
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[0] - b[0]).abs() < BOUNDARY_EPS && (a[1] - b[1]).abs() < BOUNDARY_EPS {
            return fail("repeated consecutive vertex");
        }
    }
    // Non-adjacent edge pairs must not intersect or touch.
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a1, a2) = (poly[i], poly[(i + 1) % n]);
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return fail("self-intersecting boundary");
            }
        }
    }
    if polygon_area(poly).abs() < 1e-12 {
        return fail("zero area");
    }
    Ok(())
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    point_segment_distance(p, a, b) <= BOUNDARY_EPS
}

fn segments_intersect(a1: [f64; 2], a2: [f64; 2], b1: [f64; 2], b2: [f64; 2]) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a1, b1, b2) || on_segment(a2, b1, b2) || on_segment(b1, a1, a2) || on_segment(b2, a1, a2)
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Even-odd containment with the boundary counting as inside.
fn polygon_contains(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    for i in 0..n {
        if on_segment(p, poly[i], poly[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > p[1]) != (yj > p[1]) {
            let x_cross = (xj - xi) * (p[1] - yi) / (yj - yi) + xi;
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn polygon_distance(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}
