//! Chain datastore: stores, product catalog and per-store inventory.
//!
//! Field names follow the store/inventory table columns, lowercased. Prices
//! are held as integer thousandths so three-decimal amounts stay exact.
//!
//! Snapshots are plain text, one section per entity kind:
//!
//! ```text
//! [stores]
//! store_id,store_name,store_long,store_lat,store_parking_total,store_parking_available,avg_traffic,last_epoch
//! 1,Sultan_salmiyah,29.342313,48.075153,3,2,2,
//! [products]
//! product_id,name,category
//! [inventory]
//! store_id,product_id,product_location,availability_in_store,price
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::coordinator::TelemetryUpdate;
use crate::node::TrafficLevel;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("store {0} not found")]
    StoreNotFound(u32),
    #[error("product {0} not found")]
    ProductNotFound(u32),
    #[error("store {0} already exists")]
    DuplicateStore(u32),
    #[error("product {0} already exists")]
    DuplicateProduct(u32),
    #[error("store {store_id}: epoch {epoch} is not newer than accepted epoch {current}")]
    StaleEpoch {
        store_id: u32,
        epoch: u64,
        current: u64,
    },
    #[error("store {store_id}: epoch {epoch} was already applied with different values")]
    ConflictingEpoch { store_id: u32, epoch: u64 },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("line {line}: section [{section}] is missing required column `{column}`")]
    MissingColumn {
        line: usize,
        section: String,
        column: &'static str,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatastoreError> = std::result::Result<T, E>;

/// Currency amount in thousandths, rendered with three decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(u64);

impl Price {
    pub const fn from_milli(milli: u64) -> Self {
        Price(milli)
    }

    pub const fn milli(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl FromStr for Price {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid price `{s}`");
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<3}").parse().map_err(|_| bad())?
        };
        whole
            .checked_mul(1000)
            .and_then(|w| w.checked_add(frac))
            .map(Price)
            .ok_or_else(bad)
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreRecord {
    pub store_id: u32,
    pub store_name: String,
    pub store_long: f64,
    pub store_lat: f64,
    pub store_parking_total: u32,
    pub store_parking_available: u32,
    pub avg_traffic: TrafficLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryRecord {
    pub store_id: u32,
    pub product_id: u32,
    pub product_location: u32,
    pub availability_in_store: u32,
    pub price: Price,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductRecord {
    pub product_id: u32,
    pub name: String,
    pub category: String,
}

/// Inventory row joined with its catalog entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InventoryItem {
    pub product_id: u32,
    pub name: String,
    pub category: String,
    pub product_location: u32,
    pub availability_in_store: u32,
    pub price: Price,
}

/// One cell of the product x store availability table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AvailabilityRow {
    pub product_id: u32,
    pub name: String,
    pub category: String,
    pub store_id: u32,
    pub store_name: String,
    pub availability_in_store: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct StoreRow {
    record: StoreRecord,
    last_epoch: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Datastore {
    stores: BTreeMap<u32, StoreRow>,
    products: BTreeMap<u32, ProductRecord>,
    inventory: BTreeMap<(u32, u32), InventoryRecord>,
}

fn check_text(field: &str, value: &str) -> Result<()> {
    if value.contains(['\n', '\r']) {
        return Err(DatastoreError::Invalid(format!(
            "{field} must be a single line"
        )));
    }
    Ok(())
}

impl Datastore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty() && self.products.is_empty() && self.inventory.is_empty()
    }

    pub fn insert_store(&mut self, record: StoreRecord) -> Result<()> {
        if self.stores.contains_key(&record.store_id) {
            return Err(DatastoreError::DuplicateStore(record.store_id));
        }
        self.put_store(record, None)
    }

    /// Insert or replace a store's descriptive row, resetting its epoch.
    pub fn upsert_store(&mut self, record: StoreRecord) -> Result<()> {
        self.put_store(record, None)
    }

    fn put_store(&mut self, record: StoreRecord, last_epoch: Option<u64>) -> Result<()> {
        if record.store_id == 0 {
            return Err(DatastoreError::Invalid("store_id must be positive".into()));
        }
        check_text("store_name", &record.store_name)?;
        if record.store_parking_available > record.store_parking_total {
            return Err(DatastoreError::Invalid(format!(
                "store {}: store_parking_available {} exceeds store_parking_total {}",
                record.store_id, record.store_parking_available, record.store_parking_total
            )));
        }
        if !(record.store_long.is_finite() && record.store_lat.is_finite()) {
            return Err(DatastoreError::Invalid(format!(
                "store {}: coordinates must be finite",
                record.store_id
            )));
        }
        self.stores
            .insert(record.store_id, StoreRow { record, last_epoch });
        Ok(())
    }

    pub fn insert_product(&mut self, product: ProductRecord) -> Result<()> {
        if self.products.contains_key(&product.product_id) {
            return Err(DatastoreError::DuplicateProduct(product.product_id));
        }
        check_text("name", &product.name)?;
        check_text("category", &product.category)?;
        self.products.insert(product.product_id, product);
        Ok(())
    }

    pub fn upsert_inventory(&mut self, row: InventoryRecord) -> Result<()> {
        if !self.stores.contains_key(&row.store_id) {
            return Err(DatastoreError::StoreNotFound(row.store_id));
        }
        if !self.products.contains_key(&row.product_id) {
            return Err(DatastoreError::ProductNotFound(row.product_id));
        }
        self.inventory.insert((row.store_id, row.product_id), row);
        Ok(())
    }

    /// Apply a coordinator's epoch aggregate. Epochs must increase per
    /// store; re-sending the accepted epoch with identical values is a no-op.
    pub fn update_telemetry(&mut self, update: &TelemetryUpdate) -> Result<&StoreRecord> {
        let row = self
            .stores
            .get_mut(&update.store_id)
            .ok_or(DatastoreError::StoreNotFound(update.store_id))?;
        if !update.is_well_formed() {
            return Err(DatastoreError::Invalid(format!(
                "parking_available {} exceeds parking_total {}",
                update.parking_available, update.parking_total
            )));
        }
        if update.parking_total != row.record.store_parking_total {
            return Err(DatastoreError::Invalid(format!(
                "store {} has {} slots, update reports {}",
                update.store_id, row.record.store_parking_total, update.parking_total
            )));
        }
        if let Some(current) = row.last_epoch {
            if update.epoch_id < current {
                return Err(DatastoreError::StaleEpoch {
                    store_id: update.store_id,
                    epoch: update.epoch_id,
                    current,
                });
            }
            if update.epoch_id == current {
                let same = row.record.store_parking_available == update.parking_available
                    && row.record.avg_traffic == update.avg_traffic;
                return if same {
                    Ok(&row.record)
                } else {
                    Err(DatastoreError::ConflictingEpoch {
                        store_id: update.store_id,
                        epoch: update.epoch_id,
                    })
                };
            }
        }
        row.record.store_parking_available = update.parking_available;
        row.record.avg_traffic = update.avg_traffic;
        row.last_epoch = Some(update.epoch_id);
        Ok(&row.record)
    }

    pub fn last_epoch(&self, store_id: u32) -> Option<u64> {
        self.stores.get(&store_id).and_then(|r| r.last_epoch)
    }

    pub fn list_stores(&self) -> Vec<StoreRecord> {
        self.stores.values().map(|r| r.record.clone()).collect()
    }

    pub fn get_store(&self, store_id: u32) -> Result<StoreRecord> {
        self.stores
            .get(&store_id)
            .map(|r| r.record.clone())
            .ok_or(DatastoreError::StoreNotFound(store_id))
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductRecord> {
        self.products.values()
    }

    pub fn product(&self, product_id: u32) -> Option<&ProductRecord> {
        self.products.get(&product_id)
    }

    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .products
            .values()
            .map(|p| p.category.as_str())
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn availability(&self, store_id: u32, product_id: u32) -> u32 {
        self.inventory
            .get(&(store_id, product_id))
            .map_or(0, |r| r.availability_in_store)
    }

    pub fn get_store_inventory(&self, store_id: u32) -> Result<Vec<InventoryItem>> {
        if !self.stores.contains_key(&store_id) {
            return Err(DatastoreError::StoreNotFound(store_id));
        }
        Ok(self
            .inventory
            .range((store_id, 0)..=(store_id, u32::MAX))
            .map(|(_, row)| {
                let product = &self.products[&row.product_id];
                InventoryItem {
                    product_id: row.product_id,
                    name: product.name.clone(),
                    category: product.category.clone(),
                    product_location: row.product_location,
                    availability_in_store: row.availability_in_store,
                    price: row.price,
                }
            })
            .collect())
    }

    /// Every product in `category` against every store, zero where a store
    /// does not carry it. Ordered by product then store.
    pub fn search_products(&self, category: &str) -> Vec<AvailabilityRow> {
        if category.is_empty() {
            return Vec::new();
        }
        self.products
            .values()
            .filter(|p| p.category == category)
            .flat_map(|p| {
                self.stores.values().map(move |s| AvailabilityRow {
                    product_id: p.product_id,
                    name: p.name.clone(),
                    category: p.category.clone(),
                    store_id: s.record.store_id,
                    store_name: s.record.store_name.clone(),
                    availability_in_store: self.availability(s.record.store_id, p.product_id),
                })
            })
            .collect()
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = Vec::new();
        let mut section = |name: &str, header: &[&str], rows: Vec<Vec<String>>| {
            writeln!(out, "[{name}]").unwrap();
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(header).unwrap();
            for r in rows {
                w.write_record(&r).unwrap();
            }
            out.extend(w.into_inner().unwrap());
        };
        section(
            "stores",
            STORE_COLUMNS,
            self.stores
                .values()
                .map(|r| {
                    let s = &r.record;
                    vec![
                        s.store_id.to_string(),
                        s.store_name.clone(),
                        s.store_long.to_string(),
                        s.store_lat.to_string(),
                        s.store_parking_total.to_string(),
                        s.store_parking_available.to_string(),
                        s.avg_traffic.to_string(),
                        r.last_epoch.map(|e| e.to_string()).unwrap_or_default(),
                    ]
                })
                .collect(),
        );
        section(
            "products",
            PRODUCT_COLUMNS,
            self.products
                .values()
                .map(|p| vec![p.product_id.to_string(), p.name.clone(), p.category.clone()])
                .collect(),
        );
        section(
            "inventory",
            INVENTORY_COLUMNS,
            self.inventory
                .values()
                .map(|r| {
                    vec![
                        r.store_id.to_string(),
                        r.product_id.to_string(),
                        r.product_location.to_string(),
                        r.availability_in_store.to_string(),
                        r.price.to_string(),
                    ]
                })
                .collect(),
        );
        String::from_utf8(out).expect("csv output is utf-8")
    }

    pub fn from_snapshot(text: &str) -> Result<Datastore> {
        SnapshotParser::default().parse(text)
    }

    /// Write atomically: readers see either the old file or the new one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_snapshot().as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Datastore> {
        Self::from_snapshot(&std::fs::read_to_string(path)?)
    }
}

const STORE_COLUMNS: &[&str] = &[
    "store_id",
    "store_name",
    "store_long",
    "store_lat",
    "store_parking_total",
    "store_parking_available",
    "avg_traffic",
    "last_epoch",
];
const PRODUCT_COLUMNS: &[&str] = &["product_id", "name", "category"];
const INVENTORY_COLUMNS: &[&str] = &[
    "store_id",
    "product_id",
    "product_location",
    "availability_in_store",
    "price",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Stores,
    Products,
    Inventory,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Stores => "stores",
            Section::Products => "products",
            Section::Inventory => "inventory",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            // last_epoch may be omitted.
            Section::Stores => &STORE_COLUMNS[..7],
            Section::Products => PRODUCT_COLUMNS,
            Section::Inventory => INVENTORY_COLUMNS,
        }
    }

    fn known(self) -> &'static [&'static str] {
        match self {
            Section::Stores => STORE_COLUMNS,
            Section::Products => PRODUCT_COLUMNS,
            Section::Inventory => INVENTORY_COLUMNS,
        }
    }
}

#[derive(Default)]
struct SnapshotParser {
    ds: Datastore,
    section: Option<Section>,
    columns: Option<BTreeMap<String, usize>>,
    // Inventory rows are applied after all stores and products are known.
    inventory: Vec<(usize, InventoryRecord)>,
}

fn split_line(line: &str, lineno: usize) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(line.as_bytes());
    match rdr.records().next() {
        Some(Ok(rec)) => Ok(rec.iter().map(|f| f.trim().to_owned()).collect()),
        Some(Err(e)) => Err(DatastoreError::Parse {
            line: lineno,
            message: e.to_string(),
        }),
        None => Ok(Vec::new()),
    }
}

struct Row<'a> {
    fields: &'a [String],
    columns: &'a BTreeMap<String, usize>,
    line: usize,
}

impl Row<'_> {
    fn text(&self, col: &str) -> &str {
        self.columns
            .get(col)
            .and_then(|i| self.fields.get(*i))
            .map_or("", String::as_str)
    }

    fn parse<T: FromStr>(&self, col: &str) -> Result<T> {
        let raw = self.text(col);
        raw.parse().map_err(|_| DatastoreError::Parse {
            line: self.line,
            message: format!("column `{col}`: cannot parse `{raw}`"),
        })
    }
}

impl SnapshotParser {
    fn parse(mut self, text: &str) -> Result<Datastore> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                self.section = Some(match name {
                    "stores" => Section::Stores,
                    "products" => Section::Products,
                    "inventory" => Section::Inventory,
                    other => {
                        return Err(DatastoreError::Parse {
                            line,
                            message: format!("unknown section [{other}]"),
                        })
                    }
                });
                self.columns = None;
                continue;
            }
            let Some(section) = self.section else {
                return Err(DatastoreError::Parse {
                    line,
                    message: "record outside of any section".into(),
                });
            };
            let fields = split_line(trimmed, line)?;
            match &self.columns {
                None => self.header(section, fields, line)?,
                Some(columns) => {
                    if fields.len() != columns.len() {
                        return Err(DatastoreError::Parse {
                            line,
                            message: format!(
                                "expected {} fields, found {}",
                                columns.len(),
                                fields.len()
                            ),
                        });
                    }
                    let columns = columns.clone();
                    let row = Row {
                        fields: &fields,
                        columns: &columns,
                        line,
                    };
                    self.record(section, &row)?;
                }
            }
        }
        let SnapshotParser {
            mut ds, inventory, ..
        } = self;
        for (line, row) in inventory {
            ds.upsert_inventory(row)
                .map_err(|e| DatastoreError::Parse {
                    line,
                    message: e.to_string(),
                })?;
        }
        Ok(ds)
    }

    fn header(&mut self, section: Section, fields: Vec<String>, line: usize) -> Result<()> {
        let mut columns = BTreeMap::new();
        for (i, name) in fields.into_iter().enumerate() {
            if !section.known().contains(&name.as_str()) {
                return Err(DatastoreError::Parse {
                    line,
                    message: format!("unknown column `{name}` in [{}]", section.name()),
                });
            }
            columns.insert(name, i);
        }
        if let Some(missing) = section
            .required()
            .iter()
            .find(|c| !columns.contains_key(**c))
        {
            return Err(DatastoreError::MissingColumn {
                line,
                section: section.name().to_owned(),
                column: missing,
            });
        }
        self.columns = Some(columns);
        Ok(())
    }

    fn record(&mut self, section: Section, row: &Row<'_>) -> Result<()> {
        let line = row.line;
        let at_line = |e: DatastoreError| DatastoreError::Parse {
            line,
            message: e.to_string(),
        };
        match section {
            Section::Stores => {
                let avg: u8 = row.parse("avg_traffic")?;
                let avg_traffic = TrafficLevel::new(avg).map_err(|e| DatastoreError::Parse {
                    line,
                    message: e.to_string(),
                })?;
                let last_epoch = match row.text("last_epoch") {
                    "" => None,
                    _ => Some(row.parse("last_epoch")?),
                };
                let record = StoreRecord {
                    store_id: row.parse("store_id")?,
                    store_name: row.text("store_name").to_owned(),
                    store_long: row.parse("store_long")?,
                    store_lat: row.parse("store_lat")?,
                    store_parking_total: row.parse("store_parking_total")?,
                    store_parking_available: row.parse("store_parking_available")?,
                    avg_traffic,
                };
                if self.ds.stores.contains_key(&record.store_id) {
                    return Err(at_line(DatastoreError::DuplicateStore(record.store_id)));
                }
                self.ds.put_store(record, last_epoch).map_err(at_line)
            }
            Section::Products => self
                .ds
                .insert_product(ProductRecord {
                    product_id: row.parse("product_id")?,
                    name: row.text("name").to_owned(),
                    category: row.text("category").to_owned(),
                })
                .map_err(at_line),
            Section::Inventory => {
                let price = row
                    .text("price")
                    .parse()
                    .map_err(|message| DatastoreError::Parse { line, message })?;
                self.inventory.push((
                    line,
                    InventoryRecord {
                        store_id: row.parse("store_id")?,
                        product_id: row.parse("product_id")?,
                        product_location: row.parse("product_location")?,
                        availability_in_store: row.parse("availability_in_store")?,
                        price,
                    },
                ));
                Ok(())
            }
        }
    }
}

/// Many readers, one writer; a reader never sees a half-applied update.
#[derive(Debug, Clone, Default)]
pub struct SharedDatastore(Arc<RwLock<Datastore>>);

impl SharedDatastore {
    pub fn new(ds: Datastore) -> Self {
        SharedDatastore(Arc::new(RwLock::new(ds)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Datastore> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Datastore> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use proptest::prelude::*;

    fn update(
        store_id: u32,
        epoch_id: u64,
        available: u32,
        total: u32,
        traffic: u8,
    ) -> TelemetryUpdate {
        TelemetryUpdate {
            store_id,
            epoch_id,
            parking_available: available,
            parking_total: total,
            avg_traffic: TrafficLevel::new(traffic).unwrap(),
            stale_nodes: BTreeSet::new(),
            emitted_at: None,
        }
    }

    #[test]
    fn price_formatting() {
        assert_eq!(Price::from_milli(2000).to_string(), "2.000");
        assert_eq!(Price::from_milli(100).to_string(), "0.100");
        assert_eq!("0.1".parse::<Price>(), Ok(Price::from_milli(100)));
        assert_eq!("6".parse::<Price>(), Ok(Price::from_milli(6000)));
        assert!("1.0005".parse::<Price>().is_err());
        assert!("-1.000".parse::<Price>().is_err());
        assert!(".5".parse::<Price>().is_err());
    }

    #[test]
    fn list_and_get_reference_rows() {
        let ds = fixture::reference_chain();
        let stores = ds.list_stores();
        assert_eq!(stores.len(), 2);
        assert_eq!(stores[0].store_name, "Sultan_salmiyah");
        assert_eq!(stores[1].store_name, "Sultan_shaab");
        let s2 = ds.get_store(2).unwrap();
        assert_eq!(
            (
                s2.store_parking_total,
                s2.store_parking_available,
                s2.avg_traffic.get()
            ),
            (3, 3, 3)
        );
        assert!(matches!(
            ds.get_store(999),
            Err(DatastoreError::StoreNotFound(999))
        ));
        assert!(Datastore::new().list_stores().is_empty());
    }

    #[test]
    fn third_store_sorted_by_id() {
        let mut ds = fixture::reference_chain();
        let mut extra = ds.get_store(2).unwrap();
        extra.store_id = 0;
        assert!(ds.insert_store(extra.clone()).is_err(), "ids are positive");
        extra.store_id = 3;
        extra.store_name = "Sultan_fintas".into();
        ds.insert_store(extra.clone()).unwrap();
        let ids: Vec<u32> = ds.list_stores().iter().map(|s| s.store_id).collect();
        assert_eq!(ids, [1, 2, 3]);
        assert!(matches!(
            ds.insert_store(extra),
            Err(DatastoreError::DuplicateStore(3))
        ));
    }

    #[test]
    fn telemetry_ordering() {
        let mut ds = fixture::reference_chain();
        let row = ds
            .update_telemetry(&update(1, 10, 2, 3, 2))
            .unwrap()
            .clone();
        assert_eq!(row, fixture::reference_chain().get_store(1).unwrap());
        ds.update_telemetry(&update(1, 11, 3, 3, 1)).unwrap();
        assert_eq!(ds.get_store(1).unwrap().store_parking_available, 3);
        let stale = ds.update_telemetry(&update(1, 9, 0, 3, 3));
        assert!(matches!(
            stale,
            Err(DatastoreError::StaleEpoch {
                epoch: 9,
                current: 11,
                ..
            })
        ));
        assert_eq!(ds.get_store(1).unwrap().store_parking_available, 3);
        // Same epoch, same values: accepted without change.
        ds.update_telemetry(&update(1, 11, 3, 3, 1)).unwrap();
        assert!(matches!(
            ds.update_telemetry(&update(1, 11, 1, 3, 1)),
            Err(DatastoreError::ConflictingEpoch { .. })
        ));
        assert!(matches!(
            ds.update_telemetry(&update(1, 12, 4, 3, 1)),
            Err(DatastoreError::Invalid(_))
        ));
        assert!(matches!(
            ds.update_telemetry(&update(7, 1, 0, 3, 1)),
            Err(DatastoreError::StoreNotFound(7))
        ));
    }

    #[test]
    fn inventory_join() {
        let ds = fixture::reference_chain();
        let items = ds.get_store_inventory(1).unwrap();
        assert_eq!(items.len(), 6);
        assert_eq!(
            (
                items[0].product_id,
                items[0].availability_in_store,
                items[0].price.to_string()
            ),
            (1, 5, "2.000".to_string())
        );
        assert!(ds.get_store_inventory(2).unwrap().is_empty());
        assert!(ds.get_store_inventory(42).is_err());
    }

    #[test]
    fn referential_integrity_enforced() {
        let mut ds = fixture::reference_chain();
        let row = InventoryRecord {
            store_id: 1,
            product_id: 99,
            product_location: 1,
            availability_in_store: 1,
            price: Price::from_milli(1),
        };
        assert!(matches!(
            ds.upsert_inventory(row.clone()),
            Err(DatastoreError::ProductNotFound(99))
        ));
        assert!(matches!(
            ds.upsert_inventory(InventoryRecord { store_id: 9, ..row }),
            Err(DatastoreError::StoreNotFound(9))
        ));
    }

    #[test]
    fn search_cross_join_matches_brute_force() {
        let ds = fixture::reference_chain();
        for category in ds.categories() {
            let rows = ds.search_products(&category);
            // Oracle: every (product in category, store) pair, looked up directly.
            let mut expected = Vec::new();
            for p in ds.products().filter(|p| p.category == category) {
                for s in ds.list_stores() {
                    let qty = ds
                        .get_store_inventory(s.store_id)
                        .unwrap()
                        .iter()
                        .find(|i| i.product_id == p.product_id)
                        .map_or(0, |i| i.availability_in_store);
                    expected.push((p.product_id, s.store_id, qty));
                }
            }
            let got: Vec<_> = rows
                .iter()
                .map(|r| (r.product_id, r.store_id, r.availability_in_store))
                .collect();
            assert_eq!(got, expected, "category {category}");
        }
        assert!(ds.search_products("").is_empty());
        assert!(ds.search_products("no-such-aisle").is_empty());
    }

    #[test]
    fn single_product_category_stocked_in_one_store() {
        let ds = fixture::reference_chain();
        let rows = ds.search_products("bakery");
        assert_eq!(rows.len(), 2);
        assert!(rows[0].store_id == 1 && rows[0].availability_in_store > 0);
        assert!(rows[1].store_id == 2 && rows[1].availability_in_store == 0);
        let p3 = ds
            .search_products(&ds.product(3).unwrap().category)
            .into_iter()
            .find(|r| r.product_id == 3 && r.store_id == 1)
            .unwrap();
        assert_eq!(p3.availability_in_store, 1);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut ds = fixture::reference_chain();
        ds.update_telemetry(&update(2, 5, 1, 3, 2)).unwrap();
        let text = ds.to_snapshot();
        let back = Datastore::from_snapshot(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.last_epoch(2), Some(5));
        assert_eq!(
            Datastore::from_snapshot(&Datastore::new().to_snapshot()).unwrap(),
            Datastore::new()
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.txt");
        let ds = fixture::reference_chain();
        ds.save(&path).unwrap();
        let back = Datastore::load(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back
            .get_store_inventory(1)
            .unwrap()
            .iter()
            .zip(ds.get_store_inventory(1).unwrap())
        {
            assert_eq!(a.availability_in_store, b.availability_in_store);
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text =
            "[stores]\nstore_id,store_name,store_long,store_lat,store_parking_total,avg_traffic\n";
        match Datastore::from_snapshot(text) {
            Err(DatastoreError::MissingColumn { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "store_parking_available");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let good = fixture::reference_chain().to_snapshot();
        let mut lines: Vec<&str> = good.lines().collect();
        lines[2] = "1,Sultan_salmiyah,29.3,48.0,3,4,2,";
        let err = Datastore::from_snapshot(&lines.join("\n")).unwrap_err();
        assert!(
            matches!(err, DatastoreError::Parse { line: 3, .. }),
            "{err}"
        );

        let mut lines: Vec<&str> = good.lines().collect();
        lines[2] = "1,Sultan_salmiyah,north,48.0,3,2,2,";
        let err = Datastore::from_snapshot(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("store_long"), "{err}");

        let err = Datastore::from_snapshot("1,2,3\n").unwrap_err();
        assert!(matches!(err, DatastoreError::Parse { line: 1, .. }));

        let orphan = format!("{good}9,1,1,1,1.000\n");
        let err = Datastore::from_snapshot(&orphan).unwrap_err();
        let last = good.lines().count() + 1;
        assert!(
            matches!(err, DatastoreError::Parse { line, .. } if line == last),
            "{err}"
        );
    }

    proptest! {
        #[test]
        fn prices_and_counts_survive_persistence(
            rows in proptest::collection::vec((0u32..1000, 0u64..10_000_000), 1..20)
        ) {
            let mut ds = fixture::reference_chain();
            for (i, (qty, milli)) in rows.iter().enumerate() {
                let product_id = 100 + i as u32;
                ds.insert_product(ProductRecord {
                    product_id,
                    name: format!("item, no. {i}"),
                    category: "misc".into(),
                }).unwrap();
                ds.upsert_inventory(InventoryRecord {
                    store_id: 2,
                    product_id,
                    product_location: i as u32,
                    availability_in_store: *qty,
                    price: Price::from_milli(*milli),
                }).unwrap();
            }
            let back = Datastore::from_snapshot(&ds.to_snapshot()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
