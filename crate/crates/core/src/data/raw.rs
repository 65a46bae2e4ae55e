//! Raw tracking games and their two on-disk formats.
//!
//! Neutral CSV: header `t,object_id,team_id,x,y`, one row per object per
//! frame, seconds and meters, rows sorted by `t` then `object_id`. The ball
//! carries team id `-1`.
//!
//! NBA tracking: the public SportVU event files (JSON). Each moment is
//! `[period, unix_ms, game_clock, shot_clock, null, [[team, player, x, y, z], ...]]`
//! with court coordinates in feet.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FEET_TO_METERS: f64 = 0.3048;
pub const BALL_TEAM_ID: i64 = -1;
/// Ten players and the ball.
pub const NBA_OBJECTS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    NbaTracking,
    NeutralCsv,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nba_tracking" => Ok(SourceFormat::NbaTracking),
            "neutral_csv" => Ok(SourceFormat::NeutralCsv),
            other => Err(Error::Parameter(format!("unknown source format {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSample {
    pub object_id: i64,
    pub team_id: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    /// Seconds.
    pub t: f64,
    /// Sorted by object id.
    pub objects: Vec<ObjectSample>,
    /// Set when objects are missing; flagged moments never enter a span.
    pub flagged: bool,
}

impl Moment {
    pub fn object_ids(&self) -> Vec<i64> {
        self.objects.iter().map(|o| o.object_id).collect()
    }

    pub fn has_ball(&self) -> bool {
        self.objects.iter().any(|o| o.team_id == BALL_TEAM_ID)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub moments: Vec<Moment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawGame {
    pub game_id: String,
    pub events: Vec<Event>,
    /// Court length/width in meters.
    pub court_length: f64,
    pub court_width: f64,
    /// Team id to label.
    pub team_labels: BTreeMap<i64, String>,
    /// Label used when splitting by team (home team for NBA files).
    pub focal_team: String,
}

impl RawGame {
    pub fn moments(&self) -> impl Iterator<Item = &Moment> {
        self.events.iter().flat_map(|e| e.moments.iter())
    }

    pub fn flagged_count(&self) -> usize {
        self.moments().filter(|m| m.flagged).count()
    }
}

/// NBA court, meters.
pub const NBA_COURT_LENGTH: f64 = 94.0 * FEET_TO_METERS;
pub const NBA_COURT_WIDTH: f64 = 50.0 * FEET_TO_METERS;

pub fn ingest_game<R: Read>(mut source: R, format: SourceFormat, game_id: &str) -> Result<RawGame> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    match format {
        SourceFormat::NeutralCsv => parse_neutral_csv(&text, game_id),
        SourceFormat::NbaTracking => parse_nba(&text, game_id),
    }
}

/// Flag moments missing objects relative to the fullest object set in their event.
fn flag_incomplete(event: &mut Event, required: Option<usize>, need_ball: bool) {
    let full = event
        .moments
        .iter()
        .map(|m| m.objects.len())
        .max()
        .unwrap_or(0);
    let expected = required.unwrap_or(full);
    for m in &mut event.moments {
        m.flagged = m.objects.len() != expected || (need_ball && !m.has_ball());
    }
}

fn parse_neutral_csv(text: &str, game_id: &str) -> Result<RawGame> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        location: "line 1".into(),
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols != ["t", "object_id", "team_id", "x", "y"] {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: format!("expected header t,object_id,team_id,x,y, got {header:?}"),
        });
    }
    let mut by_time: Vec<(f64, Vec<ObjectSample>)> = Vec::new();
    let mut teams = BTreeSet::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                location: loc(),
                message: format!("expected 5 fields, got {}", f.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                location: loc(),
                message: format!("bad {what} {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    location: loc(),
                    message: format!("non-finite {what}"),
                });
            }
            Ok(v)
        };
        let int = |s: &str, what: &str| -> Result<i64> {
            s.parse().map_err(|_| Error::Parse {
                location: loc(),
                message: format!("bad {what} {s:?}"),
            })
        };
        let t = num(f[0], "t")?;
        let sample = ObjectSample {
            object_id: int(f[1], "object_id")?,
            team_id: int(f[2], "team_id")?,
            x: num(f[3], "x")?,
            y: num(f[4], "y")?,
        };
        teams.insert(sample.team_id);
        match by_time.last_mut() {
            Some((lt, objs)) if *lt == t => objs.push(sample),
            Some((lt, _)) if t < *lt => {
                return Err(Error::Parse {
                    location: loc(),
                    message: format!("time {t} precedes {lt}; rows must be sorted by t"),
                })
            }
            _ => by_time.push((t, vec![sample])),
        }
    }
    let mut event = Event {
        moments: by_time
            .into_iter()
            .map(|(t, mut objects)| {
                objects.sort_by_key(|o| o.object_id);
                objects.dedup_by_key(|o| o.object_id);
                Moment {
                    t,
                    objects,
                    flagged: false,
                }
            })
            .collect(),
    };
    flag_incomplete(&mut event, None, teams.contains(&BALL_TEAM_ID));
    let team_labels: BTreeMap<i64, String> = teams
        .iter()
        .filter(|&&t| t != BALL_TEAM_ID)
        .map(|&t| (t, t.to_string()))
        .collect();
    let focal_team = team_labels.values().next().cloned().unwrap_or_default();
    Ok(RawGame {
        game_id: game_id.to_string(),
        events: vec![event],
        court_length: NBA_COURT_LENGTH,
        court_width: NBA_COURT_WIDTH,
        team_labels,
        focal_team,
    })
}

fn team_info(v: &Value) -> Option<(i64, String)> {
    let id = v.get("teamid")?.as_i64()?;
    let label = v
        .get("abbreviation")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| id.to_string());
    Some((id, label))
}

fn parse_nba(text: &str, game_id: &str) -> Result<RawGame> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let game_id = root
        .get("gameid")
        .and_then(Value::as_str)
        .unwrap_or(game_id)
        .to_string();
    let events = root
        .get("events")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse {
            location: "root".into(),
            message: "missing `events` array".into(),
        })?;
    let mut team_labels = BTreeMap::new();
    let mut focal_team = String::new();
    let mut out = Vec::with_capacity(events.len());
    for (ei, ev) in events.iter().enumerate() {
        if let Some((id, label)) = ev.get("home").and_then(team_info) {
            if focal_team.is_empty() {
                focal_team = label.clone();
            }
            team_labels.insert(id, label);
        }
        if let Some((id, label)) = ev.get("visitor").and_then(team_info) {
            team_labels.insert(id, label);
        }
        let moments = ev
            .get("moments")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse {
                location: format!("event {ei}"),
                message: "missing `moments` array".into(),
            })?;
        let mut event = Event::default();
        for (mi, m) in moments.iter().enumerate() {
            let loc = || format!("event {ei} moment {mi}");
            let bad = |msg: &str| Error::Parse {
                location: loc(),
                message: msg.to_string(),
            };
            let arr = m.as_array().ok_or_else(|| bad("moment is not an array"))?;
            let ms = arr
                .get(1)
                .and_then(Value::as_f64)
                .ok_or_else(|| bad("missing timestamp"))?;
            let rows = arr
                .get(5)
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing object list"))?;
            let mut objects = Vec::with_capacity(rows.len());
            for r in rows {
                let r = r.as_array().ok_or_else(|| bad("object row is not an array"))?;
                let get = |i: usize| r.get(i).and_then(Value::as_f64);
                let (Some(team), Some(player), Some(x), Some(y)) = (get(0), get(1), get(2), get(3))
                else {
                    return Err(bad("object row needs team, player, x, y"));
                };
                objects.push(ObjectSample {
                    object_id: player as i64,
                    team_id: team as i64,
                    x: x * FEET_TO_METERS,
                    y: y * FEET_TO_METERS,
                });
            }
            objects.sort_by_key(|o| o.object_id);
            objects.dedup_by_key(|o| o.object_id);
            event.moments.push(Moment {
                t: ms / 1000.0,
                objects,
                flagged: false,
            });
        }
        flag_incomplete(&mut event, Some(NBA_OBJECTS), true);
        out.push(event);
    }
    // timestamps relative to the first moment of the game
    let t0 = out
        .iter()
        .flat_map(|e| e.moments.iter().map(|m| m.t))
        .fold(f64::INFINITY, f64::min);
    if t0.is_finite() {
        for e in &mut out {
            for m in &mut e.moments {
                m.t -= t0;
            }
        }
    }
    Ok(RawGame {
        game_id,
        events: out,
        court_length: NBA_COURT_LENGTH,
        court_width: NBA_COURT_WIDTH,
        team_labels,
        focal_team,
    })
}

/// Serialize a game to the neutral CSV format.
pub fn write_neutral_csv(game: &RawGame) -> String {
    let mut s = String::from("t,object_id,team_id,x,y\n");
    for m in game.moments() {
        for o in &m.objects {
            s.push_str(&format!("{},{},{},{},{}\n", m.t, o.object_id, o.team_id, o.x, o.y));
        }
    }
    s
}
