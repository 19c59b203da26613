//! Strategy tables in three forms: a boxed text table, CSV and JSON
//! lines. The text form parses back into the strategy it was rendered
//! from.
//!
//! ```text
//! =======================================+
//! BR to [2 Tits For 2 Tats], val = 15.26 |
//! +--------------+-------------+-------------+----------+
//! | Histories    | P1 action   | P2 action   |   P1 val |
//! +==============+=============+=============+==========+
//! | []           | D           | C           |  15.2632 |
//! +--------------+-------------+-------------+----------+
//! ```
//!
//! Stochastic rows list `action:probability` pairs, e.g. `C:0.25 D:0.75`,
//! with probabilities printed in shortest round-trip form.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AugSpace, StochasticGame};
use crate::mdp::BestResponse;
use crate::strategy::KMemoryStrategy;

/// Output format shared by the command-line front end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Jsonl,
}

/// One augmented state of a strategy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub history: String,
    pub action: String,
    pub opponent_action: String,
    pub value: f64,
}

/// A rendered strategy of one agent against fixed opponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub title: String,
    pub agent: usize,
    pub root_value: f64,
    pub own_header: String,
    pub opponent_header: String,
    pub value_header: String,
    pub rows: Vec<TableRow>,
}

fn action_cell(game: &StochasticGame, agents: &[usize], probs: &[f64]) -> String {
    let names = |a: usize| -> String {
        if agents.len() == 1 {
            game.actions(agents[0])[a].clone()
        } else {
            // Joint opponent actions: the last listed agent varies fastest.
            let mut rest = a;
            let mut parts = vec![String::new(); agents.len()];
            for (k, &i) in agents.iter().enumerate().rev() {
                let n = game.n_actions(i);
                parts[k] = game.actions(i)[rest % n].clone();
                rest /= n;
            }
            parts.join("+")
        }
    };
    let nonzero: Vec<(usize, f64)> = probs.iter().copied().enumerate().filter(|(_, p)| *p != 0.0).collect();
    if let [(a, p)] = nonzero.as_slice() {
        if *p == 1.0 {
            return names(*a);
        }
    }
    nonzero
        .iter()
        .map(|(a, p)| format!("{}:{p}", names(*a)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn player(i: usize) -> String {
    format!("P{}", i + 1)
}

/// Renders `strategy` for `agent` against `opponents` over `space`, with
/// `values` indexed by augmented state.
pub fn strategy_table(
    game: &StochasticGame,
    agent: usize,
    strategy: &KMemoryStrategy,
    opponents: &KMemoryStrategy,
    space: &AugSpace,
    values: &[f64],
    title: &str,
) -> Result<StrategyTable> {
    if values.len() != space.len() {
        return Err(Error::mismatch("one value per augmented state is required"));
    }
    let mut rows = Vec::with_capacity(space.len());
    for (idx, aug) in space.states().iter().enumerate() {
        rows.push(TableRow {
            history: game.aug_label(aug),
            action: action_cell(game, strategy.agents(), &strategy.probs_at(aug)?),
            opponent_action: action_cell(game, opponents.agents(), &opponents.probs_at(aug)?),
            value: values[idx],
        });
    }
    let opp = opponents.agents();
    let opponent_header = if opp.len() == 1 {
        format!("{} action", player(opp[0]))
    } else {
        format!("{} action", opp.iter().map(|&i| player(i)).collect::<Vec<_>>().join("+"))
    };
    let root_value = space.roots().first().map(|&r| values[r]).unwrap_or(0.0);
    Ok(StrategyTable {
        title: title.to_string(),
        agent,
        root_value,
        own_header: format!("{} action", player(agent)),
        opponent_header,
        value_header: format!("{} val", player(agent)),
        rows,
    })
}

/// The table of a computed best response.
pub fn best_response_table(
    game: &StochasticGame,
    br: &BestResponse,
    opponents: &KMemoryStrategy,
    opponent_name: &str,
) -> Result<StrategyTable> {
    let root = br.root_values().first().copied().unwrap_or(0.0);
    strategy_table(
        game,
        br.mdp.agent(),
        &br.strategy,
        opponents,
        br.mdp.space(),
        &br.values.values,
        &format!("BR to [{opponent_name}], val = {root:.2}"),
    )
}

impl StrategyTable {
    /// The boxed text table.
    pub fn render_text(&self) -> String {
        let headers = ["Histories", self.own_header.as_str(), self.opponent_header.as_str(), self.value_header.as_str()];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| [r.history.clone(), r.action.clone(), r.opponent_action.clone(), format!("{:.4}", r.value)])
            .collect();
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len() + 2).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let rule = |fill: char| {
            let mut s = String::from("+");
            for w in &widths {
                s.extend(std::iter::repeat(fill).take(w + 2));
                s.push('+');
            }
            s
        };
        let line = |row: [&str; 4]| {
            let mut s = String::from("|");
            for (k, (c, w)) in row.iter().zip(&widths).enumerate() {
                if k == 3 {
                    s.push_str(&format!(" {c:>w$} |"));
                } else {
                    s.push_str(&format!(" {c:<w$} |"));
                }
            }
            s
        };
        let mut out = String::new();
        out.push_str(&"=".repeat(self.title.len() + 1));
        out.push_str("+\n");
        out.push_str(&format!("{} | \n", self.title));
        out.push_str(&rule('-'));
        out.push('\n');
        out.push_str(&line(headers));
        out.push('\n');
        out.push_str(&rule('='));
        out.push('\n');
        for row in &cells {
            out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
            out.push('\n');
            out.push_str(&rule('-'));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn render_jsonl(&self) -> Result<String> {
        to_jsonl(&self.rows)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Table => Ok(self.render_text()),
            Format::Csv => self.render_csv(),
            Format::Jsonl => self.render_jsonl(),
        }
    }
}

/// Serialises records as CSV with a header row.
pub fn to_csv<T: Serialize>(records: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer
            .serialize(r)
            .map_err(|e| Error::mismatch(format!("csv output failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::mismatch(format!("csv output failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::mismatch(e.to_string()))
}

/// Serialises records as one JSON object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn parse_action_cell(game: &StochasticGame, agent: usize, cell: &str, line: usize) -> Result<Vec<f64>> {
    let actions = game.actions(agent);
    let mut probs = vec![0.0; actions.len()];
    let find = |name: &str| {
        actions
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::spec(format!("line {line}"), format!("unknown action `{name}`")))
    };
    if !cell.contains(':') {
        probs[find(cell)?] = 1.0;
        return Ok(probs);
    }
    for part in cell.split_whitespace() {
        let (name, p) = part
            .rsplit_once(':')
            .ok_or_else(|| Error::spec(format!("line {line}"), format!("malformed entry `{part}`")))?;
        probs[find(name)?] = p
            .parse()
            .map_err(|_| Error::spec(format!("line {line}"), format!("malformed probability `{p}`")))?;
    }
    Ok(probs)
}

/// Reads the own-action column of a text table back into a strategy over
/// `space`. Every augmented state of `space` must appear exactly once.
pub fn parse_strategy_table(game: &StochasticGame, agent: usize, space: &AugSpace, text: &str) -> Result<KMemoryStrategy> {
    let by_label: HashMap<String, usize> = space
        .states()
        .iter()
        .enumerate()
        .map(|(i, aug)| (game.aug_label(aug), i))
        .collect();
    let mut seen = vec![false; space.len()];
    let mut rows = Vec::with_capacity(space.len());
    let mut past_header = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.starts_with("+=") {
            past_header = true;
            continue;
        }
        if !past_header || !raw.starts_with('|') {
            continue;
        }
        let cells: Vec<&str> = raw.trim_matches('|').split(" | ").map(str::trim).collect();
        if cells.len() != 4 {
            return Err(Error::spec(format!("line {line}"), "expected four columns"));
        }
        let idx = *by_label
            .get(cells[0])
            .ok_or_else(|| Error::spec(format!("line {line}"), format!("unknown history `{}`", cells[0])))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::spec(format!("line {line}"), "duplicate history"));
        }
        rows.push((space.get(idx).clone(), parse_action_cell(game, agent, cells[1], line)?));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::spec(
            "table",
            format!("no row for history `{}`", game.aug_label(space.get(missing))),
        ));
    }
    KMemoryStrategy::from_table(agent, space.memory(), game.n_actions(agent), rows)
}
