//! Lenient extraction of stage answers from model text.
//!
//! Models echo the instruction format, so answers may carry a code fence,
//! `//` comments, Python booleans, missing commas between lines, or trailing
//! commas. These are repaired before strict schema checks.

use serde_json::Value;

use scsim_core::query::{QueryConstraint, WeightedScore};
use scsim_core::CompanyId;

use crate::protocol::{Inbox, PlanRecord, ReplyRecord, RequestKind, RequestRecord};

/// The JSON part of an answer: a fenced block if present, otherwise the span
/// from the first `[`/`{` to the last matching bracket type.
pub fn extract_json(text: &str) -> &str {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    let open = text.find(['[', '{']);
    match open {
        Some(i) => {
            let close = if text.as_bytes()[i] == b'[' { ']' } else { '}' };
            match text.rfind(close) {
                Some(j) if j > i => &text[i..=j],
                _ => text[i..].trim(),
            }
        }
        None => text.trim(),
    }
}

/// Repairs comments, Python literals, missing and trailing commas outside strings.
pub fn normalize(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut i = 0;
    let mut in_str = false;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            out.push(c);
            if c == '\\' && i + 1 < chars.len() {
                out.push(chars[i + 1]);
                i += 2;
                continue;
            }
            if c == '"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
                i += 1;
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push_str(match word.as_str() {
                    "True" => "true",
                    "False" => "false",
                    "None" => "null",
                    _ => &word,
                });
            }
            '\n' => {
                let prev = out.trim_end().chars().last();
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace()).copied();
                let value_end = matches!(prev, Some('"' | ']' | '}' | 'e' | 'l')) || prev.is_some_and(|p| p.is_ascii_digit());
                let value_start = matches!(next, Some('"' | '{' | '['));
                if value_end && value_start {
                    out.push(',');
                }
                out.push('\n');
                i += 1;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    strip_trailing_commas(&out)
}

fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            if c == '"' && chars[..i].iter().rev().take_while(|&&b| b == '\\').count() % 2 == 0 {
                in_str = false;
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']' | '}') | None) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

pub fn parse_value(text: &str) -> Result<Value, String> {
    let raw = extract_json(text);
    serde_json::from_str(raw)
        .or_else(|_| serde_json::from_str(&normalize(raw)))
        .map_err(|e| format!("answer is not valid JSON ({e})"))
}

fn as_array(v: Value, what: &str) -> Result<Vec<Value>, String> {
    match v {
        Value::Array(a) => Ok(a),
        Value::Object(ref m) if m.len() == 1 && m.values().next().is_some_and(Value::is_array) => {
            Ok(m.values().next().and_then(Value::as_array).cloned().unwrap_or_default())
        }
        Value::Object(_) => Ok(vec![v]),
        _ => Err(format!("expected a JSON list of {what}")),
    }
}

fn field<'a>(obj: &'a Value, key: &str, index: usize) -> Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("entry {} is missing `{key}`", index + 1))
}

fn text(obj: &Value, key: &str, index: usize) -> Result<String, String> {
    match field(obj, key, index)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("entry {}: `{key}` must be a string", index + 1)),
    }
}

fn flag(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn boolean(obj: &Value, key: &str, index: usize) -> Result<bool, String> {
    flag(field(obj, key, index)?).ok_or_else(|| format!("entry {}: `{key}` must be true or false", index + 1))
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn parse_plans(text_: &str) -> Result<Vec<PlanRecord>, String> {
    let items = as_array(parse_value(text_)?, "plans")?;
    items
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let seek_collaboration = boolean(obj, "is_seek_collaboration", i)?;
            let seek_suppliers = match obj.get("is_seek_suppliers") {
                Some(v) => flag(v).ok_or_else(|| format!("entry {}: `is_seek_suppliers` must be true or false", i + 1))?,
                None if !seek_collaboration => false,
                None => return Err(format!("entry {} is missing `is_seek_suppliers`", i + 1)),
            };
            let plan = PlanRecord {
                description: text(obj, "plan", i)?,
                reason: text(obj, "reason", i)?,
                seek_collaboration,
                seek_suppliers,
            };
            if !plan.is_valid() {
                return Err(format!("entry {}: `plan` and `reason` must be non-empty", i + 1));
            }
            Ok(plan)
        })
        .collect()
}

pub fn parse_constraints(text_: &str, n_plans: usize, feature_names: &[String]) -> Result<Vec<QueryConstraint>, String> {
    let items = as_array(parse_value(text_)?, "query constraints")?;
    if items.len() != n_plans {
        return Err(format!("expected {n_plans} entries, one per plan, got {}", items.len()));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let industry_set = match obj.get("industry_set") {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).ok_or_else(|| format!("entry {}: industries must be strings", i + 1)))
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(format!("entry {}: `industry_set` must be a list", i + 1)),
            };
            let weighted_scores = match field(obj, "weighted_scores", i)? {
                Value::Array(a) => a
                    .iter()
                    .map(|w| {
                        let feature = w.get("feature").and_then(Value::as_str);
                        let weight = w.get("weight").and_then(number);
                        match (feature, weight) {
                            (Some(f), Some(x)) if x.is_finite() => Ok(WeightedScore {
                                feature: f.to_string(),
                                weight: x,
                            }),
                            _ => Err(format!("entry {}: each weighted score needs `feature` and numeric `weight`", i + 1)),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Value::Object(m) => m
                    .iter()
                    .map(|(f, x)| {
                        number(x)
                            .map(|weight| WeightedScore {
                                feature: f.clone(),
                                weight,
                            })
                            .ok_or_else(|| format!("entry {}: weight for `{f}` is not a number", i + 1))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                _ => return Err(format!("entry {}: `weighted_scores` must be a list", i + 1)),
            };
            let c = QueryConstraint {
                industry_set,
                weighted_scores,
            };
            c.validate(feature_names)
                .map_err(|e| format!("entry {}: {e}; allowed features are {feature_names:?}", i + 1))?;
            Ok(c)
        })
        .collect()
}

pub fn parse_requests(text_: &str, n_plans: usize) -> Result<Vec<Vec<RequestRecord>>, String> {
    let items = match parse_value(text_)? {
        Value::Array(a) => a,
        _ => return Err("expected a list with one inner list per plan".into()),
    };
    let items = if n_plans == 1 && items.iter().all(Value::is_object) && !items.is_empty() {
        vec![Value::Array(items)]
    } else {
        items
    };
    if items.len() != n_plans {
        return Err(format!("expected {n_plans} inner lists, one per plan, got {}", items.len()));
    }
    items
        .iter()
        .enumerate()
        .map(|(p, inner)| {
            let inner = inner
                .as_array()
                .ok_or_else(|| format!("plan {}: expected a list of companies", p + 1))?;
            inner
                .iter()
                .enumerate()
                .map(|(i, obj)| {
                    let target = CompanyId::new(text(obj, "company_id", i)?)
                        .map_err(|e| format!("plan {} entry {}: {e}", p + 1, i + 1))?;
                    Ok(RequestRecord {
                        plan_index: p,
                        target,
                        chosen: boolean(obj, "is_chosen", i)?,
                        reason: obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string(),
                        extra_info: obj.get("extra_info").and_then(Value::as_str).unwrap_or_default().to_string(),
                        kind: RequestKind::Terminate,
                    })
                })
                .collect()
        })
        .collect()
}

/// Every requester in the inbox must be answered; replies to unknown
/// requesters are dropped.
pub fn parse_replies(text_: &str, inbox: &Inbox) -> Result<Vec<ReplyRecord>, String> {
    let items = as_array(parse_value(text_)?, "replies")?;
    let mut out = Vec::new();
    for (i, obj) in items.iter().enumerate() {
        let requester = CompanyId::new(text(obj, "company_id", i)?).map_err(|e| format!("entry {}: {e}", i + 1))?;
        let accepted = boolean(obj, "is_accepted", i)?;
        let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
        let mut matched = false;
        for (direction, e) in inbox.entries() {
            if e.requester == requester {
                matched = true;
                out.push(ReplyRecord {
                    requester: requester.clone(),
                    accepted,
                    reason: reason.clone(),
                    direction,
                });
            }
        }
        if !matched {
            log::info!("reply to {requester}, who sent no request, ignored");
        }
    }
    let missing: Vec<&str> = inbox
        .entries()
        .filter(|(_, e)| !out.iter().any(|r| r.requester == e.requester))
        .map(|(_, e)| e.requester.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("no reply for requests from {missing:?}"));
    }
    Ok(out)
}
