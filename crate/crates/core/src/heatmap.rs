//! Attention heatmaps: word weights in red, unit weights in blue, each
//! normalized to its document maximum.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitHeat {
    pub tokens: Vec<String>,
    /// Raw word attention; entry 0 is the prefix position. Sums to 1.
    pub word_weights: Vec<f64>,
    /// Word weights over the tokens (prefix excluded) divided by the largest
    /// such weight in the document.
    pub word_intensity: Vec<f64>,
    pub sentence_weight: f64,
    /// Sentence weight divided by the largest one in the document.
    pub sentence_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentHeat {
    pub fandom: String,
    pub units: Vec<UnitHeat>,
}

impl DocumentHeat {
    /// `(unit, token)` of the most attended token.
    pub fn hottest_token(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (u, unit) in self.units.iter().enumerate() {
            for (t, &w) in unit.word_intensity.iter().enumerate() {
                if best.is_none_or(|(_, _, b)| w > b) {
                    best = Some((u, t, w));
                }
            }
        }
        best.map(|(u, t, _)| (u, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapReport {
    pub pair_id: String,
    pub documents: Vec<DocumentHeat>,
}

fn normalized(values: &[f64], max: f64) -> Vec<f64> {
    values.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
}

pub fn document_heat(model: &Model, text: &str, fandom: &str) -> Result<DocumentHeat> {
    let doc = model.prepare(text, fandom);
    let (_, trace) = model.encoder.encode(&doc)?;
    let word_max = trace
        .word
        .iter()
        .flat_map(|w| w[1..].iter().copied())
        .fold(0.0, f64::max);
    let sent_max = trace.sentence.iter().copied().fold(0.0, f64::max);
    // the encoder skips units without tokens
    let units = doc
        .units
        .iter()
        .filter(|u| !u.token_ids.is_empty())
        .zip(&trace.word)
        .zip(&trace.sentence)
        .map(|((u, w), &s)| UnitHeat {
            tokens: u.tokens.clone(),
            word_weights: w.clone(),
            word_intensity: normalized(&w[1..], word_max),
            sentence_weight: s,
            sentence_intensity: if sent_max > 0.0 { s / sent_max } else { 0.0 },
        })
        .collect();
    Ok(DocumentHeat {
        fandom: fandom.to_owned(),
        units,
    })
}

pub fn pair_heat(model: &Model, pair_id: &str, texts: [&str; 2], fandoms: [&str; 2]) -> Result<HeatmapReport> {
    Ok(HeatmapReport {
        pair_id: pair_id.to_owned(),
        documents: vec![
            document_heat(model, texts[0], fandoms[0])?,
            document_heat(model, texts[1], fandoms[1])?,
        ],
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Self-contained static HTML page.
pub fn render_html(report: &HeatmapReport) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention: {id}</title>\n<style>\
         body{{font-family:sans-serif;max-width:60em;margin:2em auto}}\
         .unit{{padding:.3em .5em;margin:.2em 0;border-left:.4em solid}}\
         .w{{padding:0 .1em}}</style></head><body>\n<h1>pair {id}</h1>\n",
        id = escape(&report.pair_id)
    );
    for (k, d) in report.documents.iter().enumerate() {
        let _ = writeln!(h, "<h2>document {} <small>({})</small></h2>", k + 1, escape(&d.fandom));
        for u in &d.units {
            let _ = write!(
                h,
                "<div class=\"unit\" style=\"border-color:rgba(0,0,255,{a:.3});background:rgba(0,0,255,{b:.3})\">",
                a = u.sentence_intensity,
                b = 0.25 * u.sentence_intensity
            );
            for (t, w) in u.tokens.iter().zip(&u.word_intensity) {
                let _ = write!(
                    h,
                    "<span class=\"w\" style=\"background:rgba(255,0,0,{w:.3})\" title=\"{w:.3}\">{}</span> ",
                    escape(t)
                );
            }
            h.push_str("</div>\n");
        }
    }
    h.push_str("</body></html>\n");
    h
}
