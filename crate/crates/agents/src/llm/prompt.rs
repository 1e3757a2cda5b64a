//! Stage prompt rendering. Lists and dicts use Python literal syntax, which is
//! what the stage instructions show the model.

use std::fmt::Write;

use scsim_core::query::{CandidateList, QueryConstraint};
use scsim_core::FeatureVector;

use crate::protocol::{Inbox, PlanRecord};
use crate::view::AgentView;

pub fn py_str(s: &str) -> String {
    if s.contains('\'') && !s.contains('"') {
        format!("\"{}\"", s.replace('\\', "\\\\"))
    } else {
        format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
    }
}

pub fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

pub fn py_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn py_list<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let parts: Vec<String> = items.into_iter().map(py_str).collect();
    format!("[{}]", parts.join(", "))
}

pub fn feature_dict(names: &[String], values: &FeatureVector) -> String {
    let parts: Vec<String> = names
        .iter()
        .zip(values.values())
        .map(|(n, v)| format!("{}: {}", py_str(n), py_float(*v)))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

pub fn weighted_scores(c: &QueryConstraint) -> String {
    let parts: Vec<String> = c
        .weighted_scores
        .iter()
        .map(|w| format!("{{'feature': {}, 'weight': {}}}", py_str(&w.feature), py_float(w.weight)))
        .collect();
    format!("[{}]", parts.join(", "))
}

/// The firm header once, then one block per reference-window step, oldest first.
pub fn company_info(view: &AgentView) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "You are company {}.", view.company);
    let _ = writeln!(s, "Your industry is {}.", view.industry);
    let _ = writeln!(s, "The following is global knowledge: {}", view.global_knowledge);
    let _ = writeln!(s, "The following is your company-specific knowledge: {}.", view.knowledge);
    for step in &view.window {
        let _ = writeln!(
            s,
            "At {}, your feature info is: {}",
            step.label,
            feature_dict(&view.feature_names, &step.features)
        );
        let _ = writeln!(s, "You have the following supply chain connections (supplier, customer):");
        let _ = writeln!(s, "supplier: {}", py_list(step.suppliers.iter().map(|p| p.id.as_str())));
        for p in &step.suppliers {
            let _ = writeln!(
                s,
                "    Supplier {} industry is {}. feature info: {}",
                p.id,
                p.industry,
                feature_dict(&view.feature_names, &p.features)
            );
        }
        let _ = writeln!(s, "customer: {}", py_list(step.customers.iter().map(|p| p.id.as_str())));
        for p in &step.customers {
            let _ = writeln!(
                s,
                "    Customer {} industry is {}. feature info: {}",
                p.id,
                p.industry,
                feature_dict(&view.feature_names, &p.features)
            );
        }
    }
    s
}

const ROLE: &str = "You are now an company manager and you are making decisions on the management of your supply chain in next timestampe.";

pub fn plan_system() -> String {
    format!(
        r#"{ROLE}
The user will provide supply chain network and company information within this supply chain.
You need to fully analyze the information provided by the user and propose plans.
A plan should include you intention, you reason with step-by-step thinking, and whether you are plan to increase or decrease partners.
If true as you plan to increase, you should provide query requirement for company query.
You response should fully following the following content in strict JSON format:
```json
[
    {{
        "plan": "your plan' brief description",
        "reason": "your reason for this Plan"
        "is_seek_collaboration": True/False "whether you plan to increase collaboration or decrease"
        "is_seek_suppliers": True/False //if true, you are seek more suppliers otherwise you are seek more customers. Only work if is_seek_collaboration=True
    }},
    ...
]
```"#
    )
}

pub fn plan_user(view: &AgentView) -> String {
    format!(
        "The following is information about your company and its supply chain partners:\n{}",
        company_info(view)
    )
}

pub fn query_system(feature_names: &[String]) -> String {
    let cols = py_list(feature_names.iter().map(String::as_str));
    format!(
        r#"{ROLE}
The user will provide supply chain network and company information within this supply chain.
You should fully analyze the information provided by the user and propose plans. Then, you should list the constrain of industry and the weighted score of each features. Those information will be used for querying potential company.
You should response with the same number of plans as the user provided.
You response should fully following the following content in strict JSON format:
```json
[
    {{
        "industry_set": [industry1, ...],//the constrain on company industries, you may return a empty list to ignore this constrain
        "weighted_scores": [{{ feature: xxx, weight:xxx }},{{ feature: xxx, weight:xxx }}] ,//weighted score of each feature,only output in feature_col_list: {cols}
    }},
    ...
]
```"#
    )
}

fn plan_lines(plans: &[PlanRecord]) -> String {
    let mut s = String::new();
    for (i, p) in plans.iter().enumerate() {
        let _ = writeln!(s, "    Plan {}: {}. With reason: {}.", i + 1, p.description, p.reason);
    }
    s
}

pub fn query_user(view: &AgentView, plans: &[PlanRecord]) -> String {
    format!(
        "The following is information about your company and its supply chain partners:\n{}\nThe following is your plan list:\n{}",
        company_info(view),
        plan_lines(plans)
    )
}

pub fn request_system() -> String {
    format!(
        r#"{ROLE}
The user will provide supply chain information and plan list with potential candidate if he want to increase collaboration.
You should fully analyze the information provided by the user and propose plan. Then, you should make detail decisions. Specifically, if the "is_added" is false, you should choose one or some company and cancel collaborations with them with step by step thinking. If ths "is_added" is true, you should check the candidate and determine one or some company and request collaborations with them,  with step by step thinking.
You answer shoule include the list of id that you decided to cancel or request collaboration for the plan. For a plan that does not want to increase collaborators, you should choose companies from your existing supply chains to cancel. The outer dimension is plan and the inner is id
You should strictly follow the format below.
```json
    [
    [{{
          "company_id": "the id of company",
      "is_chosen": True/False//  whether you determine to choose this candidate to build collaboration and output even if false.
        "reason": "the reason why you make such a decision",
        "extra_info": "The information that would be sent to the company to facilitate collaboration. Only works when this plan is a seek collaboration plan and is_chosen is True.
    }},
    ...],
    ...]
```"#
    )
}

pub fn request_user(
    view: &AgentView,
    plans: &[PlanRecord],
    constraints: &[QueryConstraint],
    candidates: &[CandidateList],
) -> String {
    let mut s = format!(
        "The following is information about your company and its supply chain partners.\n{}\nThe following is your plan list with potential companies:\n",
        company_info(view)
    );
    let empty = CandidateList::default();
    for (i, p) in plans.iter().enumerate() {
        let c = constraints.get(i).cloned().unwrap_or_default();
        let list = candidates.get(i).unwrap_or(&empty);
        let _ = writeln!(s, "    Plan {}: {}. With reason: {}.", i + 1, p.description, p.reason);
        let _ = writeln!(s, "    is_added: {}", py_bool(p.seek_collaboration));
        let _ = writeln!(
            s,
            "    Your query constrain is industry in {} and feature weighted score is {}.",
            py_list(c.industry_set.iter().map(String::as_str)),
            weighted_scores(&c)
        );
        if p.seek_collaboration {
            let _ = writeln!(s, "        The following is your candidate company list:");
            if list.entries.is_empty() {
                let _ = writeln!(s, "        (no company matched the query)");
            }
            for cand in &list.entries {
                let _ = writeln!(
                    s,
                    "        Company {} industry is {}. feature info: {}. score: {}",
                    cand.id,
                    cand.industry,
                    feature_dict(&view.feature_names, &cand.features),
                    py_float(cand.score)
                );
            }
        }
    }
    s
}

pub fn reply_system() -> String {
    format!(
        r#"{ROLE}
The user will provide supply chain information and collaboration requests from other companies. You have to decide whether collaborate or not for each request one by one and give corresponding reasoning with step-by-step thinking.
You response and fully follow the following content in strict JSON format:
```json
[
    {{
      "company_id": "the id of the company requesting",
      "is_accepted": True/False, // Do you accept this collaboration
      "reason": "the reason"
    }},
    ...
]
```"#
    )
}

pub fn reply_user(view: &AgentView, inbox: &Inbox) -> String {
    let mut s = format!(
        "The following is information about your company and its supply chain partners.\n{}\nThe following is the collaboration requests you received:\n",
        company_info(view)
    );
    let _ = writeln!(
        s,
        "Request from company {} to be your supplier.",
        py_list(inbox.wants_to_supply.iter().map(|e| e.requester.as_str()))
    );
    let _ = writeln!(
        s,
        "Request from company {} to be your customer.",
        py_list(inbox.wants_to_buy.iter().map(|e| e.requester.as_str()))
    );
    for (_, e) in inbox.entries() {
        let _ = writeln!(
            s,
            "Company {} industry is {}. feature info: {}",
            e.requester,
            e.industry,
            feature_dict(&view.feature_names, &e.features)
        );
        if !e.extra_info.is_empty() {
            let _ = writeln!(s, "Message from company {}: {}", e.requester, e.extra_info);
        }
        if let Some(note) = &e.note {
            let _ = writeln!(s, "Reviewer note on the request from company {}: {}", e.requester, note);
        }
    }
    s
}
