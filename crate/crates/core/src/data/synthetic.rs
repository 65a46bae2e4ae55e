//! Desk-scale synthetic basketball scenes.
//!
//! Players weave along smoothly varying curvature, make occasional abrupt
//! cuts, and share a team drift that flips with possession. The ball rides
//! with a holder and is passed along straight lines. Output goes through the
//! same [`RawGame`] path as real data.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raw::{Event, Moment, ObjectSample, RawGame, BALL_TEAM_ID, NBA_COURT_LENGTH, NBA_COURT_WIDTH};
use crate::error::{Error, Result};
use crate::DT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub games: usize,
    /// Length of each game's single continuous span.
    pub seconds: f64,
    /// Focal team labels, assigned to games round-robin.
    pub teams: Vec<String>,
    pub seed: u64,
    /// Standard deviation of additive position jitter, meters.
    pub noise_m: f64,
    /// Mean rate of abrupt direction changes per player.
    pub cut_rate_hz: f64,
    /// Weave amplitude range, rad/s.
    pub weave_amplitude: (f64, f64),
    /// Weave period range, seconds.
    pub weave_period: (f64, f64),
    /// Mean speed range, m/s.
    pub speed: (f64, f64),
    /// Per-team multiplier on the weave period, by position in `teams`.
    pub team_style: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            games: 40,
            seconds: 12.0,
            teams: vec!["A".into()],
            seed: 0,
            noise_m: 0.0,
            cut_rate_hz: 0.04,
            weave_amplitude: (2.0, 3.0),
            weave_period: (1.2, 2.0),
            speed: (2.0, 3.5),
            team_style: 0.1,
        }
    }
}

struct Player {
    pos: [f64; 2],
    heading: f64,
    amp: f64,
    period: f64,
    phase: f64,
    base_speed: f64,
    speed_phase: f64,
    /// Remaining steps and per-step heading change of an ongoing cut.
    cut: Option<(usize, f64)>,
}

enum Ball {
    Held(usize),
    Flying { from: [f64; 2], to: usize, elapsed: f64, duration: f64 },
}

const PLAYERS: usize = 10;
const WALL_MARGIN: f64 = 2.0;
const PASS_SPEED: f64 = 9.0;

fn team_of(p: usize) -> i64 {
    if p < PLAYERS / 2 {
        1
    } else {
        2
    }
}

/// Generate `config.games` games. Game `g` uses its own stream derived from
/// `(seed, g)`, so adding games never changes earlier ones.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<RawGame>> {
    if config.games == 0 || config.teams.is_empty() || !(config.seconds > 0.0) {
        return Err(Error::Configuration(
            "synthetic data needs games > 0, seconds > 0 and at least one team".into(),
        ));
    }
    Ok((0..config.games)
        .map(|g| {
            let team_index = g % config.teams.len();
            generate_game(config, g, team_index)
        })
        .collect())
}

fn generate_game(config: &SyntheticConfig, g: usize, team_index: usize) -> RawGame {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (g as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (len, wid) = (NBA_COURT_LENGTH, NBA_COURT_WIDTH);
    let style = 1.0 + config.team_style * team_index as f64;
    let mut players: Vec<Player> = (0..PLAYERS)
        .map(|_| Player {
            pos: [
                rng.gen_range(WALL_MARGIN..len - WALL_MARGIN),
                rng.gen_range(WALL_MARGIN..wid - WALL_MARGIN),
            ],
            heading: rng.gen_range(-PI..PI),
            amp: rng.gen_range(config.weave_amplitude.0..=config.weave_amplitude.1),
            period: style * rng.gen_range(config.weave_period.0..=config.weave_period.1),
            phase: rng.gen_range(0.0..2.0 * PI),
            base_speed: rng.gen_range(config.speed.0..=config.speed.1),
            speed_phase: rng.gen_range(0.0..2.0 * PI),
            cut: None,
        })
        .collect();
    let steps = (config.seconds / DT).round() as usize;
    let mut ball = Ball::Held(0);
    let mut next_pass = rng.gen_range(1.5..3.5);
    let mut direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut next_flip = rng.gen_range(6.0..10.0);
    let mut drift = [0.0f64; 2];
    let mut moments = Vec::with_capacity(steps);

    for step in 0..steps {
        let t = step as f64 * DT;
        if t >= next_flip {
            direction = -direction;
            next_flip = t + rng.gen_range(6.0..10.0);
        }
        // drift relaxes toward the attacking direction over ~1 s
        drift[0] += (direction * 0.8 - drift[0]) * DT;
        drift[1] += (0.0 - drift[1]) * DT;

        for p in players.iter_mut() {
            let mut omega = p.amp * (2.0 * PI * t / p.period + p.phase).sin();
            // steer away from walls
            let (c, s) = (p.heading.cos(), p.heading.sin());
            let mut push = [0.0, 0.0];
            if p.pos[0] < WALL_MARGIN {
                push[0] = 1.0;
            } else if p.pos[0] > len - WALL_MARGIN {
                push[0] = -1.0;
            }
            if p.pos[1] < WALL_MARGIN {
                push[1] = 1.0;
            } else if p.pos[1] > wid - WALL_MARGIN {
                push[1] = -1.0;
            }
            if push != [0.0, 0.0] && push[0] * c + push[1] * s < 0.3 {
                let cross = c * push[1] - s * push[0];
                omega += 3.0 * if cross >= 0.0 { 1.0 } else { -1.0 };
            }
            match p.cut.as_mut() {
                Some((left, delta)) => {
                    p.heading += *delta;
                    *left -= 1;
                    if *left == 0 {
                        p.cut = None;
                    }
                }
                None => {
                    if rng.gen_bool((config.cut_rate_hz * DT).clamp(0.0, 1.0)) {
                        let angle = rng.gen_range(1.2..2.6) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        p.cut = Some((3, angle / 3.0));
                    }
                }
            }
            p.heading += omega * DT;
            let speed = p.base_speed * (1.0 + 0.25 * (2.0 * PI * t / (1.7 * p.period) + p.speed_phase).sin());
            let v = [speed * p.heading.cos() + drift[0], speed * p.heading.sin() + drift[1]];
            p.pos[0] = (p.pos[0] + v[0] * DT).clamp(0.0, len);
            p.pos[1] = (p.pos[1] + v[1] * DT).clamp(0.0, wid);
        }

        let ball_pos = match &mut ball {
            Ball::Held(h) => {
                let p = &players[*h];
                let bp = [p.pos[0] + 0.3 * p.heading.cos(), p.pos[1] + 0.3 * p.heading.sin()];
                if t >= next_pass {
                    let holder = *h;
                    let same_team = rng.gen_bool(0.9);
                    let to = loop {
                        let c = rng.gen_range(0..PLAYERS);
                        if c != holder && (team_of(c) == team_of(holder)) == same_team {
                            break c;
                        }
                    };
                    let d = (players[to].pos[0] - bp[0]).hypot(players[to].pos[1] - bp[1]);
                    ball = Ball::Flying {
                        from: bp,
                        to,
                        elapsed: 0.0,
                        duration: (d / PASS_SPEED).max(2.0 * DT),
                    };
                }
                bp
            }
            Ball::Flying { from, to, elapsed, duration } => {
                *elapsed += DT;
                let w = (*elapsed / *duration).min(1.0);
                let target = players[*to].pos;
                let bp = [from[0] + w * (target[0] - from[0]), from[1] + w * (target[1] - from[1])];
                if w >= 1.0 {
                    ball = Ball::Held(*to);
                    next_pass = t + rng.gen_range(1.5..3.5);
                }
                bp
            }
        };

        let mut objects = Vec::with_capacity(PLAYERS + 1);
        let mut jitter = |x: f64| {
            if config.noise_m > 0.0 {
                x + config.noise_m * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                x
            }
        };
        objects.push(ObjectSample {
            object_id: -1,
            team_id: BALL_TEAM_ID,
            x: jitter(ball_pos[0]),
            y: jitter(ball_pos[1]),
        });
        for (i, p) in players.iter().enumerate() {
            objects.push(ObjectSample {
                object_id: i as i64 + 1,
                team_id: team_of(i),
                x: jitter(p.pos[0]),
                y: jitter(p.pos[1]),
            });
        }
        moments.push(Moment {
            t,
            objects,
            flagged: false,
        });
    }

    let focal = config.teams[team_index].clone();
    let mut team_labels = BTreeMap::new();
    team_labels.insert(1, focal.clone());
    team_labels.insert(2, format!("{focal}-opp"));
    RawGame {
        game_id: format!("syn-{}-{g:03}", config.seed),
        events: vec![Event { moments }],
        court_length: len,
        court_width: wid,
        team_labels,
        focal_team: focal,
    }
}
