//! Box-score games: parsing, value ranks, prefiltering, templated unit
//! strings and plan linearization.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::metrics::RecordRef;
use crate::plan::PlanStep;

pub const MATCH_ENTITY: &str = "match";
pub const MATCH_DATE: &str = "MATCH-DATE";
pub const TEAM_NAME: &str = "TEAM-NAME";
pub const TEAM_CITY: &str = "TEAM-CITY";
pub const TEAM_HOME_AWAY: &str = "TEAM-HOME_AWAY";
pub const PLAYER_FIRST_NAME: &str = "PLAYER-FIRST_NAME";
pub const PLAYER_SECOND_NAME: &str = "PLAYER-SECOND_NAME";
pub const PLAYER_TEAM: &str = "PLAYER-TEAM";

pub const BEG_TOKEN: &str = "<BEG>";
pub const EOS_TOKEN: &str = "<EOS>";
pub const EOT_TOKEN: &str = "<EOT>";

/// `(type, phrase)` rendered as "`phrase` of E is V".
pub const TEAM_TEMPLATES: [(&str, &str); 15] = [
    (TEAM_NAME, "team name"),
    (TEAM_CITY, "team city"),
    ("TEAM-PTS_QTR1", "team 1st quarter points"),
    ("TEAM-PTS_QTR2", "team 2nd quarter points"),
    ("TEAM-PTS_QTR3", "team 3rd quarter points"),
    ("TEAM-PTS_QTR4", "team 4th quarter points"),
    ("TEAM-FT_PCT", "team free throw percentage"),
    ("TEAM-PTS", "team points scored"),
    ("TEAM-AST", "team assists"),
    ("TEAM-LOSSES", "team losses"),
    ("TEAM-WINS", "team wins"),
    ("TEAM-REB", "team rebounds"),
    ("TEAM-TOV", "team turnovers"),
    ("TEAM-FG3_PCT", "team 3-point field goal percentage"),
    ("TEAM-FG_PCT", "team field goal percentage"),
];

pub const PLAYER_TEMPLATES: [(&str, &str); 22] = [
    (PLAYER_FIRST_NAME, "player first name"),
    (PLAYER_SECOND_NAME, "player second name"),
    ("PLAYER-PTS", "player points scored"),
    ("PLAYER-FGM", "player field goals made"),
    ("PLAYER-FGA", "player field goals attempted"),
    ("PLAYER-MIN", "player minutes played"),
    ("PLAYER-FG3M", "player 3-point field goals made"),
    ("PLAYER-FG3A", "player 3-point field goals attempted"),
    ("PLAYER-STL", "player steals"),
    ("PLAYER-FTM", "player free throws made"),
    ("PLAYER-FTA", "player free throws attempted"),
    ("PLAYER-BLK", "player blocks"),
    ("PLAYER-AST", "player assists"),
    ("PLAYER-TO", "player turnovers"),
    ("PLAYER-PF", "player fouls"),
    ("PLAYER-REB", "player rebounds"),
    ("PLAYER-START_POSITION", "player starting position"),
    ("PLAYER-OREB", "player offensive rebounds"),
    ("PLAYER-DREB", "player defensive rebounds"),
    ("PLAYER-FG_PCT", "player field goals percentage"),
    ("PLAYER-FG3_PCT", "player 3-point field goals percentage"),
    ("PLAYER-FT_PCT", "player free throws percentage"),
];

/// Every record type with a template, in table order.
pub fn known_types() -> Vec<&'static str> {
    let mut t = vec![MATCH_DATE];
    t.extend(TEAM_TEMPLATES.iter().map(|(k, _)| *k));
    t.push(TEAM_HOME_AWAY);
    t.extend(PLAYER_TEMPLATES.iter().map(|(k, _)| *k));
    t.push(PLAYER_TEAM);
    t
}

fn phrase(record_type: &str) -> Option<&'static str> {
    TEAM_TEMPLATES.iter().chain(PLAYER_TEMPLATES.iter()).find(|(k, _)| *k == record_type).map(|(_, p)| *p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameDate {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    /// Monday is 0.
    pub weekday: u32,
}

impl GameDate {
    pub fn new(year: i32, month: u32, day: u32) -> Result<Self> {
        let d = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| Error::Input(format!("invalid date {year}-{month}-{day}")))?;
        Ok(GameDate { year, month, day, weekday: d.weekday().num_days_from_monday() })
    }

    /// Accepts `MM_DD_YY` (two-digit years are 20YY) and `YYYY-MM-DD`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unrecognized date {s:?}"));
        let num = |p: &str| p.parse::<u32>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(['_', '-']).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        if parts[0].len() == 4 {
            Self::new(num(parts[0])? as i32, num(parts[1])?, num(parts[2])?)
        } else {
            let y = num(parts[2])? as i32;
            Self::new(if parts[2].len() == 2 { 2000 + y } else { y }, num(parts[0])?, num(parts[1])?)
        }
    }

    pub fn iso(&self) -> String {
        format!("{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Home,
    Away,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Home => "home",
            Side::Away => "away",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub key: String,
    pub name: String,
    pub city: String,
    pub side: Side,
    /// Keyed by full type name (`TEAM-PTS`), name and city excluded.
    pub stats: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub key: String,
    pub first_name: String,
    pub second_name: String,
    pub team: Option<String>,
    /// Keyed by full type name (`PLAYER-PTS`), names excluded.
    pub stats: BTreeMap<String, String>,
    /// City as given in the box score, kept for serialization.
    pub team_city: String,
}

/// A plan element as stored in plan files.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanItem {
    Record {
        entity: String,
        #[serde(rename = "type")]
        record_type: String,
    },
    Break(BreakToken),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BreakToken {
    #[serde(rename = "EOS")]
    Eos,
    #[serde(rename = "EOT")]
    Eot,
}

impl PlanItem {
    pub fn record(entity: impl Into<String>, record_type: impl Into<String>) -> Self {
        PlanItem::Record { entity: entity.into(), record_type: record_type.into() }
    }

    pub fn is_record(&self) -> bool {
        matches!(self, PlanItem::Record { .. })
    }
}

impl fmt::Display for PlanItem {
    /// Records print as `entity|type`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanItem::Record { entity, record_type } => write!(f, "{entity}|{record_type}"),
            PlanItem::Break(BreakToken::Eos) => f.write_str(EOS_TOKEN),
            PlanItem::Break(BreakToken::Eot) => f.write_str(EOT_TOKEN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotowireGame {
    pub id: Option<String>,
    pub date: Option<GameDate>,
    /// Home team first.
    pub teams: [Team; 2],
    pub players: Vec<Player>,
    pub reference_summary: Option<Vec<String>>,
    pub reference_plan: Option<Vec<PlanItem>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn entity_key(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).map(|p| p.split_whitespace().collect::<Vec<_>>().join("_")).collect::<Vec<_>>().join("_")
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => Some("N/A".into()),
        _ => None,
    }
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.get(path).and_then(Value::as_object).ok_or_else(|| Error::MissingField(path.into()))
}

fn parse_team(raw: &Value, side: Side, warnings: &mut Vec<String>) -> Result<Team> {
    let prefix = if side == Side::Home { "home" } else { "vis" };
    let line_path = format!("{prefix}_line");
    let line = object(raw, &line_path)?;
    let field = |key: &str, fallback: &str| -> Result<String> {
        line.get(key)
            .and_then(scalar)
            .or_else(|| raw.get(fallback).and_then(scalar))
            .ok_or_else(|| Error::MissingField(format!("{line_path}.{key}")))
    };
    let name = field(TEAM_NAME, &format!("{prefix}_name"))?;
    let city = field(TEAM_CITY, &format!("{prefix}_city"))?;
    let mut stats = BTreeMap::new();
    for (k, v) in line {
        if k == TEAM_NAME || k == TEAM_CITY {
            continue;
        }
        let Some(value) = scalar(v) else {
            warnings.push(format!("{line_path}.{k}: non-scalar value skipped"));
            continue;
        };
        if phrase(k).is_none() {
            warnings.push(format!("{line_path}.{k}: unknown team entry type kept without a template"));
        }
        stats.insert(k.clone(), value);
    }
    Ok(Team { key: entity_key(&[&city, &name]), name, city, side, stats })
}

/// Box-score column name to record type: `PTS` and `PLAYER-PTS` both map to
/// `PLAYER-PTS`.
fn player_type(column: &str) -> String {
    if column.starts_with("PLAYER-") {
        column.to_string()
    } else {
        format!("PLAYER-{column}")
    }
}

/// Parses a game in the public box-score JSON layout.
pub fn parse_game(raw: &Value) -> Result<RotowireGame> {
    let mut warnings = Vec::new();
    let home = parse_team(raw, Side::Home, &mut warnings)?;
    let away = parse_team(raw, Side::Away, &mut warnings)?;
    let date = match raw.get("day").or_else(|| raw.get("date")).and_then(Value::as_str) {
        Some(s) => Some(GameDate::parse(s)?),
        None => None,
    };

    let mut players = Vec::new();
    if let Some(box_score) = raw.get("box_score").and_then(Value::as_object) {
        let mut rows: Vec<String> = box_score.values().filter_map(Value::as_object).flat_map(|m| m.keys().cloned()).collect();
        rows.sort_by(|a, b| a.parse::<u64>().ok().cmp(&b.parse::<u64>().ok()).then(a.cmp(b)));
        rows.dedup();
        let cell = |column: &str, row: &str| box_score.get(column).and_then(|c| c.get(row)).and_then(scalar);
        for row in rows {
            let first = cell("FIRST_NAME", &row).or_else(|| cell(PLAYER_FIRST_NAME, &row)).unwrap_or_default();
            let second = cell("SECOND_NAME", &row).or_else(|| cell(PLAYER_SECOND_NAME, &row)).unwrap_or_default();
            let full = cell("PLAYER_NAME", &row).unwrap_or_else(|| format!("{first} {second}"));
            let team_city = cell("TEAM_CITY", &row).unwrap_or_default();
            let team = if home.city == away.city {
                warnings.push(format!("box_score row {row}: both teams share city {team_city:?}; team unknown"));
                None
            } else if team_city == home.city {
                Some(home.key.clone())
            } else if team_city == away.city {
                Some(away.key.clone())
            } else {
                warnings.push(format!("box_score row {row}: city {team_city:?} matches neither team"));
                None
            };
            let mut stats = BTreeMap::new();
            for (column, values) in box_score {
                if matches!(column.as_str(), "FIRST_NAME" | "SECOND_NAME" | "PLAYER_NAME" | "TEAM_CITY" | PLAYER_FIRST_NAME | PLAYER_SECOND_NAME) {
                    continue;
                }
                if let Some(v) = values.get(&row).and_then(scalar) {
                    stats.insert(player_type(column), v);
                }
            }
            players.push(Player { key: entity_key(&[&full]), first_name: first, second_name: second, team, stats, team_city });
        }
        let unknown = box_score.keys().filter(|c| {
            !matches!(c.as_str(), "FIRST_NAME" | "SECOND_NAME" | "PLAYER_NAME" | "TEAM_CITY" | PLAYER_FIRST_NAME | PLAYER_SECOND_NAME)
                && phrase(&player_type(c)).is_none()
        });
        for c in unknown {
            warnings.push(format!("box_score.{c}: unknown player entry type kept without a template"));
        }
    } else {
        warnings.push("box_score missing".into());
    }
    if players.is_empty() {
        warnings.push("game has no players".into());
    }

    let reference_summary = match raw.get("summary") {
        Some(Value::Array(a)) => Some(a.iter().filter_map(Value::as_str).map(String::from).collect()),
        Some(Value::String(s)) => Some(s.split_whitespace().map(String::from).collect()),
        _ => None,
    };
    let reference_plan = match raw.get("plan") {
        Some(p) => Some(serde_json::from_value(p.clone())?),
        None => None,
    };
    let id = raw.get("id").and_then(scalar);
    Ok(RotowireGame { id, date, teams: [home, away], players, reference_summary, reference_plan, warnings })
}

/// Back to the public layout; [`parse_game`] inverts this.
pub fn to_raw(game: &RotowireGame) -> Value {
    let line = |t: &Team| {
        let mut m: Map<String, Value> = t.stats.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        m.insert(TEAM_NAME.into(), t.name.clone().into());
        m.insert(TEAM_CITY.into(), t.city.clone().into());
        Value::Object(m)
    };
    let mut box_score: BTreeMap<String, Map<String, Value>> = BTreeMap::new();
    for (i, p) in game.players.iter().enumerate() {
        let row = i.to_string();
        let mut put = |col: &str, v: &str| {
            box_score.entry(col.to_string()).or_default().insert(row.clone(), v.into());
        };
        put("FIRST_NAME", &p.first_name);
        put("SECOND_NAME", &p.second_name);
        put("PLAYER_NAME", &p.key.replace('_', " "));
        put("TEAM_CITY", &p.team_city);
        for (k, v) in &p.stats {
            put(k.strip_prefix("PLAYER-").unwrap_or(k), v);
        }
    }
    let mut raw = json!({
        "home_name": game.teams[0].name,
        "home_city": game.teams[0].city,
        "vis_name": game.teams[1].name,
        "vis_city": game.teams[1].city,
        "home_line": line(&game.teams[0]),
        "vis_line": line(&game.teams[1]),
        "box_score": box_score,
    });
    if let Some(d) = game.date {
        raw["day"] = d.iso().into();
    }
    if let Some(id) = &game.id {
        raw["id"] = id.clone().into();
    }
    if let Some(s) = &game.reference_summary {
        raw["summary"] = json!(s);
    }
    if let Some(p) = &game.reference_plan {
        raw["plan"] = json!(p);
    }
    raw
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub record: RecordRef,
    /// Competition rank within the type, largest value first; `None` for
    /// non-numeric values.
    pub rank: Option<usize>,
}

impl RotowireGame {
    /// All records in table order: date, home team, away team, then players.
    pub fn records(&self) -> Vec<RecordRef> {
        let mut out = Vec::new();
        if let Some(d) = self.date {
            out.push(RecordRef::new(MATCH_ENTITY, MATCH_DATE, d.iso()));
        }
        for t in &self.teams {
            out.push(RecordRef::new(&t.key, TEAM_NAME, &t.name));
            out.push(RecordRef::new(&t.key, TEAM_CITY, &t.city));
            out.push(RecordRef::new(&t.key, TEAM_HOME_AWAY, t.side.as_str()));
            out.extend(ordered_stats(&t.stats, &TEAM_TEMPLATES).map(|(k, v)| RecordRef::new(&t.key, k, v)));
        }
        for p in &self.players {
            out.push(RecordRef::new(&p.key, PLAYER_FIRST_NAME, &p.first_name));
            out.push(RecordRef::new(&p.key, PLAYER_SECOND_NAME, &p.second_name));
            if let Some(team) = &p.team {
                out.push(RecordRef::new(&p.key, PLAYER_TEAM, team));
            }
            out.extend(ordered_stats(&p.stats, &PLAYER_TEMPLATES).map(|(k, v)| RecordRef::new(&p.key, k, v)));
        }
        out
    }

    pub fn team(&self, key: &str) -> Option<&Team> {
        self.teams.iter().find(|t| t.key == key)
    }
}

/// Templated types in table order, then unknown types alphabetically.
fn ordered_stats<'a>(stats: &'a BTreeMap<String, String>, table: &'a [(&str, &str)]) -> impl Iterator<Item = (&'a str, &'a str)> {
    let known = table.iter().filter_map(|(k, _)| stats.get_key_value(*k)).map(|(k, v)| (k.as_str(), v.as_str()));
    let unknown = stats.iter().filter(|(k, _)| !table.iter().any(|(t, _)| t == k)).map(|(k, v)| (k.as_str(), v.as_str()));
    known.chain(unknown)
}

fn is_ranked_type(t: &str) -> bool {
    !matches!(t, MATCH_DATE | TEAM_NAME | TEAM_CITY | TEAM_HOME_AWAY | PLAYER_FIRST_NAME | PLAYER_SECOND_NAME | PLAYER_TEAM)
}

fn numeric(v: &str) -> Option<f64> {
    v.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Competition ranks (1, 1, 3) of numeric values within each type.
pub fn rank_records(game: &RotowireGame) -> Vec<RankedRecord> {
    let records = game.records();
    let mut by_type: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &records {
        if let Some(x) = numeric(&r.value).filter(|_| is_ranked_type(&r.record_type)) {
            by_type.entry(&r.record_type).or_default().push(x);
        }
    }
    records
        .iter()
        .map(|r| {
            let rank = numeric(&r.value)
                .filter(|_| is_ranked_type(&r.record_type))
                .map(|x| 1 + by_type[r.record_type.as_str()].iter().filter(|&&y| y > x).count());
            RankedRecord { record: r.clone(), rank }
        })
        .collect()
}

/// Keeps records until `records + specials <= max_units`: every N/A player
/// entry goes first, then 0-valued player entries from the end of the table.
pub fn prefilter(records: &[RankedRecord], max_units: usize, specials: usize) -> Result<Vec<RankedRecord>> {
    let is_player = |r: &RankedRecord| r.record.record_type.starts_with("PLAYER-");
    let mut kept: Vec<RankedRecord> = records.iter().filter(|r| !(is_player(r) && r.record.value.trim() == "N/A")).cloned().collect();
    let mut i = kept.len();
    while kept.len() + specials > max_units && i > 0 {
        i -= 1;
        if is_player(&kept[i]) && numeric(&kept[i].record.value) == Some(0.0) {
            kept.remove(i);
        }
    }
    if kept.len() + specials > max_units {
        return Err(Error::OverBudget { budget: max_units, remaining: kept.len() + specials });
    }
    Ok(kept)
}

/// Ranked records with a template, prefiltered to fit `max_units`.
pub fn game_units(game: &RotowireGame, max_units: usize, specials: usize) -> Result<Vec<RankedRecord>> {
    let ranked: Vec<RankedRecord> = rank_records(game).into_iter().filter(|r| has_template(&r.record.record_type)).collect();
    prefilter(&ranked, max_units, specials)
}

pub fn has_template(record_type: &str) -> bool {
    matches!(record_type, MATCH_DATE | TEAM_HOME_AWAY | PLAYER_TEAM) || phrase(record_type).is_some()
}

/// Plan records that are absent from `kept`.
pub fn prefilter_violations<'a>(kept: &[RankedRecord], plan: &'a [PlanItem]) -> Vec<&'a PlanItem> {
    plan.iter()
        .filter(|item| match item {
            PlanItem::Record { entity, record_type } => !kept.iter().any(|r| &r.record.entity == entity && &r.record.record_type == record_type),
            PlanItem::Break(_) => false,
        })
        .collect()
}

pub fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// The natural-language rendering of one record.
pub fn templated_text(record: &RankedRecord) -> Result<String> {
    let r = &record.record;
    let base = match r.record_type.as_str() {
        MATCH_DATE => {
            let d = GameDate::parse(&r.value)?;
            format!("match date of match is year: {:04} month: {:02} day: {:02} day_of_week: {}", d.year, d.month, d.day, d.weekday)
        }
        TEAM_HOME_AWAY => format!("{} is {} team of match", r.entity, r.value),
        PLAYER_TEAM => format!("{} is player of {}", r.entity, r.value),
        t => {
            let p = phrase(t).ok_or_else(|| Error::UnknownRecordType(t.to_string()))?;
            format!("{p} of {} is {}", r.entity, r.value)
        }
    };
    Ok(match record.rank {
        Some(k) => format!("{base} which is {} best", ordinal(k)),
        None => base,
    })
}

/// [`templated_text`] split on whitespace.
pub fn templated_sentence(record: &RankedRecord) -> Result<Vec<String>> {
    Ok(templated_text(record)?.split_whitespace().map(String::from).collect())
}

/// `<BEG>`, then records as `entity|type`, `<EOS>` at breaks and `<EOT>` last.
pub fn linearize_plan(plan: &[PlanItem]) -> Result<Vec<String>> {
    let mut out = vec![BEG_TOKEN.to_string()];
    for (i, item) in plan.iter().enumerate() {
        if *item == PlanItem::Break(BreakToken::Eot) {
            if i + 1 != plan.len() {
                return Err(Error::Input(format!("plan continues after <EOT> at position {i}")));
            }
            break;
        }
        out.push(item.to_string());
    }
    out.push(EOT_TOKEN.to_string());
    Ok(out)
}

/// Inverse of [`linearize_plan`]; the result ends with an explicit `EOT`.
pub fn parse_linearized(tokens: &[impl AsRef<str>]) -> Result<Vec<PlanItem>> {
    let mut it = tokens.iter().map(AsRef::as_ref);
    if it.next() != Some(BEG_TOKEN) {
        return Err(Error::Input("linearized plan must start with <BEG>".into()));
    }
    let mut plan = Vec::new();
    for tok in it {
        if plan.last() == Some(&PlanItem::Break(BreakToken::Eot)) {
            return Err(Error::Input("tokens after <EOT>".into()));
        }
        plan.push(match tok {
            EOS_TOKEN => PlanItem::Break(BreakToken::Eos),
            EOT_TOKEN => PlanItem::Break(BreakToken::Eot),
            rec => {
                let (entity, record_type) = rec.split_once('|').ok_or_else(|| Error::Input(format!("bad plan token {rec:?}")))?;
                PlanItem::record(entity, record_type)
            }
        });
    }
    if plan.last() != Some(&PlanItem::Break(BreakToken::Eot)) {
        return Err(Error::Input("linearized plan must end with <EOT>".into()));
    }
    Ok(plan)
}

/// Maps plan items onto unit indices of `units`.
pub fn resolve_plan(plan: &[PlanItem], units: &[RecordRef]) -> Result<Vec<PlanStep>> {
    plan.iter()
        .map(|item| match item {
            PlanItem::Break(BreakToken::Eos) => Ok(PlanStep::SentenceBreak),
            PlanItem::Break(BreakToken::Eot) => Ok(PlanStep::EndOfPlan),
            PlanItem::Record { entity, record_type } => units
                .iter()
                .position(|u| &u.entity == entity && &u.record_type == record_type)
                .map(PlanStep::Unit)
                .ok_or_else(|| Error::Input(format!("plan record {item} is not among the input units"))),
        })
        .collect()
}

/// Inverse of [`resolve_plan`].
pub fn plan_items(steps: &[PlanStep], units: &[RecordRef]) -> Result<Vec<PlanItem>> {
    steps
        .iter()
        .map(|s| match s {
            PlanStep::SentenceBreak => Ok(PlanItem::Break(BreakToken::Eos)),
            PlanStep::EndOfPlan => Ok(PlanItem::Break(BreakToken::Eot)),
            PlanStep::Unit(i) => units
                .get(*i)
                .map(|u| PlanItem::record(&u.entity, &u.record_type))
                .ok_or(Error::IndexOutOfRange { op: "plan_items", index: *i, len: units.len() }),
        })
        .collect()
}

/// Records of a plan with values looked up in `units`, for CS and CO.
pub fn plan_records(plan: &[PlanItem], units: &[RecordRef]) -> Vec<RecordRef> {
    plan.iter()
        .filter_map(|item| match item {
            PlanItem::Record { entity, record_type } => Some(
                units
                    .iter()
                    .find(|u| &u.entity == entity && &u.record_type == record_type)
                    .cloned()
                    .unwrap_or_else(|| RecordRef::new(entity, record_type, "")),
            ),
            PlanItem::Break(_) => None,
        })
        .collect()
}

/// Team names, team cities and sentence breaks may repeat in a plan.
pub fn repeatable_unit(record: &RecordRef) -> bool {
    matches!(record.record_type.as_str(), TEAM_NAME | TEAM_CITY)
}

/// One plan file line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub id: String,
    pub plan: Vec<PlanItem>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub plans: usize,
    pub mean_entries: f64,
    pub mean_sentences: f64,
    /// `(entries, count)` pairs sorted by entries.
    pub entry_histogram: Vec<(usize, usize)>,
    pub sentence_histogram: Vec<(usize, usize)>,
}

/// Sentences are maximal runs of records between breaks.
pub fn count_plan(plan: &[PlanItem]) -> (usize, usize) {
    let entries = plan.iter().filter(|i| i.is_record()).count();
    let mut sentences = 0;
    let mut open = false;
    for item in plan {
        if item.is_record() {
            open = true;
        } else if open {
            sentences += 1;
            open = false;
        }
    }
    (entries, sentences + usize::from(open))
}

pub fn plan_stats(plans: &[Vec<PlanItem>]) -> PlanStats {
    let mut entry_hist = BTreeMap::new();
    let mut sentence_hist = BTreeMap::new();
    let (mut e_sum, mut s_sum) = (0, 0);
    for p in plans {
        let (e, s) = count_plan(p);
        e_sum += e;
        s_sum += s;
        *entry_hist.entry(e).or_insert(0) += 1;
        *sentence_hist.entry(s).or_insert(0) += 1;
    }
    let n = plans.len().max(1) as f64;
    PlanStats {
        plans: plans.len(),
        mean_entries: e_sum as f64 / n,
        mean_sentences: s_sum as f64 / n,
        entry_histogram: entry_hist.into_iter().collect(),
        sentence_histogram: sentence_hist.into_iter().collect(),
    }
}
