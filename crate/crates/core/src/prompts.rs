//! Chat prompt builders for every model call the system makes.
//!
//! All builders return LF-terminated text with trailing whitespace stripped
//! from each line and no trailing blank lines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvq::{self, DvqError};
use crate::schemadb::{format_schema_block, AnnotatedDatabase, DatabaseSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    fn new(role: Role, content: &str) -> Self {
        Self {
            role,
            content: normalize(content),
        }
    }

    pub fn system(content: &str) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: &str) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: &str) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("shot {index} has an unparsable DVQ: {source}")]
    MalformedShot {
        index: usize,
        #[source]
        source: DvqError,
    },
    #[error("retune prompt needs at least one reference DVQ")]
    EmptyReferences,
    #[error("database {0:?} has no annotation")]
    MissingAnnotation(String),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
}

/// Strips trailing whitespace per line and drops trailing blank lines.
pub fn normalize(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let end = lines
        .iter()
        .rposition(|l| !l.is_empty())
        .map_or(0, |i| i + 1);
    lines[..end].join("\n")
}

/// Serializes a conversation for golden files: each message is preceded by a
/// `<<<ROLE>>>` line.
pub fn transcript(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str("<<<");
        out.push_str(&m.role.as_str().to_uppercase());
        out.push_str(">>>\n");
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

fn non_empty(value: &str, field: &'static str) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::EmptyField(field))
    } else {
        Ok(())
    }
}

pub const CHART_TYPE_LINE: &str = "### Chart Type: [ BAR , PIE , LINE , SCATTER ]";

pub const GENERATION_SYSTEM: &str =
    "Please follow the syntax in the examples instead of SQL syntax.";
pub const GENERATION_INSTRUCTION: &str = "#### Given Natural Language Questions, Generate DVQs based on their correspoding Database Schemas.";

pub const RETUNE_SYSTEM: &str = "The Reference Data Visualization Queries(DVQs) all comply with the syntax of DVQ. Please follow the syntax of the referenced DVQ to modify the Original DVQ.";
pub const RETUNE_INSTRUCTIONS: &str = "#### Given the Reference DVQs, please modify the Original DVQ to mimic the style of the Reference DVQs.
#### NOTE: Do not Modify the column name in Original DVQ. Especially do not Modify the column names in the ORDER clause!";

pub const RETUNE_SHOT_USER: &str = "### Reference DVQs:
10 - Visualize BAR SELECT JOB_ID , SUM(DEPARTMENT_ID) FROM employees WHERE first_name LIKE '%D%' OR first_name LIKE '%S%' GROUP BY JOB_ID ORDER BY SUM(DEPARTMEN)

#### Given the Reference DVQs, please modify the Original DVQ to mimic the style of the Reference DVQs.
#### NOTE: Do not Modify the column name in Original DVQ. Especially do not Modify the column names in the ORDER clause!
### Original DVQ:
# Visualize BAR SELECT JOB_ID , COUNT(DISTINCT JOB_ID) FROM employees WHERE DEPARTMENT_ID = (SELECT DEPARTMENT_ID FROM departments WHERE DEPARTMENT_NAME = Finance)
A: Let’s think step by step!";

pub const RETUNE_SHOT_ASSISTANT: &str = "### Modified DVQ:
# Visualize BAR SELECT JOB_ID , COUNT(JOB_ID) FROM employees AS T1 JOIN departments AS T2 ON T1.DEPARTMENT_ID = T2.DEPARTMENT_ID WHERE T2.DEPARTMENT_NAME = 'Finance' GROUP BY JOB_ID";

pub const STEP_BY_STEP: &str = "A: Let’s think step by step!";

pub const ANNOTATION_SYSTEM: &str =
    "You are a data mining engineer with ten years of experience in data visualization.";
pub const ANNOTATION_INSTRUCTION: &str =
    "#### Please generate detailed natural language annotations to the following database schemas.";

/// Schema block of the built-in annotation example, as originally printed.
pub const ANNOTATION_SHOT_SCHEMA: &str = "# Table departments, columns = [ * , Dept_ID , Dept_NAME , Manager_ID , Location_ID ]
# Table job_history , columns = [ * , employee_id , START_DATE , END_DATE , JOB_ID , Dept_ID ]
# Table jobs , columns = [ * , JOB_ID , JOB_TITLE , minimum_salary , maximum_salary ]
# Foreign_keys = [ job_history.JOB_ID = jobs.JOB_ID , job_history.Dept_ID = departments.Dept_ID ]";

pub const ANNOTATION_SHOT_ANSWER: &str = "Table departments:
- Stores data related to different departments within an organization.
- Columns:
  - Dept_ID: Unique identifier for each department.
  - Dept_NAME: Name of the department.
  - Manager_ID: Identifier of the manager of the department.
  - Location_ID: Identifier of the location where the department is situated.

Table job_history:
- Stores historical data of job changes for employees.
- Columns:
  - employee_id: Identifier of the employee.
  - START_DATE: Start date of the job role.
  - END_DATE: End date of the job role.
  - JOB_ID: Identifier of the job role.
  - Dept_ID: Identifier of the department during the job role.

Table jobs:
- Contains information about different job roles.
- Columns:
  - JOB_ID: Unique identifier for each job role.
  - JOB_TITLE: Title of the job role.
  - minimum_salary: Minimum salary for the job role.
  - maximum_salary: Maximum salary for the job role.

Foreign Keys:
- job_history.JOB_ID references jobs.JOB_ID, linking job history to specific job roles.
- job_history.Dept_ID references departments.Dept_ID, connecting job history to departments.";

pub const DEBUG_NOTE: &str = "#### NOTE: Don’t replace column names in Original DVQ that already exist in the database schemas, especially column names in GROUP BY Clause!";
pub const DEBUG_INSTRUCTION: &str = "#### Given Database Schemas and their corresponding Natural Language Annotations, Please replace the column names in the Data Visualization Query(DVQ, a new Programming Language abstracted from Vega-Zero) that do not exist in the database.";

pub const DEBUG_SHOT_ORIGINAL: &str = "Visualize BAR SELECT jobid , COUNT(jobid) FROM employees AS T1 JOIN departments AS T2 ON T1.DEPARTMENT_ID = T2.DEPARTMENT_ID WHERE T2.DEPARTMENT_NAME = 'Finance' GROUP BY FIRST_NAME";
pub const DEBUG_SHOT_ASSISTANT: &str = "### Revised DVQ:
# Visualize BAR SELECT JOB_ID , COUNT(JOB_ID) FROM employees AS T1 JOIN departments AS T2 ON T1.Dept_ID = T2.Dept_ID WHERE T2.Dept_NAME = 'Finance' GROUP BY FIRST_NAME";

pub const NLQ_REWRITE_SYSTEM: &str =
    "You rewrite questions about databases so that they keep their meaning but not their wording.";
pub const NLQ_REWRITE_INSTRUCTION: &str = "#### Rewrite the question below. Swap its nouns for synonyms wherever the meaning allows, and never name a table or column from the schemas verbatim. Keep the requested chart and every condition unchanged. Return only the rewritten question.";

/// A retrieved training example offered to the generator.
#[derive(Debug, Clone, Copy)]
pub struct Shot<'a> {
    pub nlq: &'a str,
    pub dvq: &'a str,
    pub schema: &'a DatabaseSchema,
    pub score: f64,
}

fn question_block(schema: &DatabaseSchema, nlq: &str) -> String {
    format!(
        "### Database Schemas:\n{}\n#\n{CHART_TYPE_LINE}\n### Natural Language Question:\n# “{}”\n### Data Visualization Query:",
        format_schema_block(schema),
        nlq.trim()
    )
}

/// Orders shots for the generator: ascending score, so the most similar shot
/// sits right above the question. Among equal scores, earlier-ranked shots
/// end up closer to the question.
pub fn order_shots<'a>(shots: &[Shot<'a>]) -> Vec<Shot<'a>> {
    let mut ordered: Vec<Shot<'a>> = shots.iter().rev().copied().collect();
    ordered.sort_by(|a, b| a.score.total_cmp(&b.score));
    ordered
}

pub fn generation_prompt(
    target_nlq: &str,
    schema: &DatabaseSchema,
    shots: &[Shot<'_>],
) -> Result<Vec<ChatMessage>, PromptError> {
    non_empty(target_nlq, "target NLQ")?;
    for (index, shot) in shots.iter().enumerate() {
        non_empty(shot.nlq, "shot NLQ")?;
        dvq::parse_dvq(shot.dvq).map_err(|source| PromptError::MalformedShot { index, source })?;
    }
    let mut blocks = vec![GENERATION_INSTRUCTION.to_string()];
    for shot in order_shots(shots) {
        blocks.push(format!(
            "{}\nA: {}",
            question_block(shot.schema, shot.nlq),
            shot.dvq.trim()
        ));
    }
    blocks.push(question_block(schema, target_nlq));
    Ok(vec![
        ChatMessage::system(GENERATION_SYSTEM),
        ChatMessage::user(&blocks.join("\n\n")),
    ])
}

/// `references` are ranked best first. They are numbered from 1 in reverse,
/// so the best reference carries the highest number and comes last.
pub fn retune_prompt(
    references: &[&str],
    original_dvq: &str,
) -> Result<Vec<ChatMessage>, PromptError> {
    if references.is_empty() {
        return Err(PromptError::EmptyReferences);
    }
    non_empty(original_dvq, "original DVQ")?;
    let listed: Vec<String> = references
        .iter()
        .rev()
        .enumerate()
        .map(|(i, r)| format!("{} - {}", i + 1, r.trim()))
        .collect();
    let user = format!(
        "### Reference DVQs:\n{}\n\n{RETUNE_INSTRUCTIONS}\n### Original DVQ:\n# {}\n{STEP_BY_STEP}",
        listed.join("\n"),
        original_dvq.trim()
    );
    Ok(vec![
        ChatMessage::system(RETUNE_SYSTEM),
        ChatMessage::user(RETUNE_SHOT_USER),
        ChatMessage::assistant(RETUNE_SHOT_ASSISTANT),
        ChatMessage::user(&user),
    ])
}

fn annotation_shot() -> String {
    format!(
        "{ANNOTATION_INSTRUCTION}\n### Database Schemas:\n{ANNOTATION_SHOT_SCHEMA}\n\n### Natural Language Annotations:\nA:\n{ANNOTATION_SHOT_ANSWER}"
    )
}

fn debug_tail(original_dvq: &str) -> String {
    format!(
        "{DEBUG_INSTRUCTION}\n{DEBUG_NOTE}\n### Original DVQ:\n# {}\n{STEP_BY_STEP}",
        original_dvq.trim()
    )
}

/// Includes the built-in worked example and repeats the NOTE as a second
/// system turn before the live request.
pub fn debug_prompt(
    db: &AnnotatedDatabase,
    original_dvq: &str,
) -> Result<Vec<ChatMessage>, PromptError> {
    if db.annotation.trim().is_empty() {
        return Err(PromptError::MissingAnnotation(db.schema.db_id.clone()));
    }
    non_empty(original_dvq, "original DVQ")?;
    let shot = format!("{}\n\n{}", annotation_shot(), debug_tail(DEBUG_SHOT_ORIGINAL));
    let user = format!(
        "{ANNOTATION_INSTRUCTION}\n### Database Schemas:\n{}\n\n### Natural Language Annotations:\n{}\n\n{}",
        format_schema_block(&db.schema),
        normalize(&db.annotation),
        debug_tail(original_dvq)
    );
    Ok(vec![
        ChatMessage::system(DEBUG_NOTE),
        ChatMessage::user(&shot),
        ChatMessage::assistant(DEBUG_SHOT_ASSISTANT),
        ChatMessage::system(DEBUG_NOTE),
        ChatMessage::user(&user),
    ])
}

pub fn annotation_prompt(schema: &DatabaseSchema) -> Vec<ChatMessage> {
    let user = format!(
        "{}\n\n### Database Schemas:\n{}\n\n### Natural Language Annotations:\nA:",
        annotation_shot(),
        format_schema_block(schema)
    );
    vec![
        ChatMessage::system(ANNOTATION_SYSTEM),
        ChatMessage::user(&user),
    ]
}

pub fn schema_substitution_prompt(
    db_name: &str,
    table_name: &str,
    column_name: &str,
    col_type: &str,
) -> Result<Vec<ChatMessage>, PromptError> {
    non_empty(db_name, "database name")?;
    non_empty(table_name, "table name")?;
    non_empty(column_name, "column name")?;
    non_empty(col_type, "column type")?;
    let text = format!(
        "In the '{table_name}' table '{table_name}' based on the '{db_name}' database, what alternative name could be used for a column with the data type '{col_type}' that conveys a similar meaning to '{column_name}'? Please return only one English word rather than a sentence."
    );
    Ok(vec![ChatMessage::user(&text)])
}

pub fn nlq_reconstruction_prompt(
    nlq: &str,
    schema: &DatabaseSchema,
) -> Result<Vec<ChatMessage>, PromptError> {
    non_empty(nlq, "NLQ")?;
    let user = format!(
        "### Database Schemas:\n{}\n\n{NLQ_REWRITE_INSTRUCTION}\n### Natural Language Question:\n# “{}”\n### Rewritten Question:",
        format_schema_block(schema),
        nlq.trim()
    );
    Ok(vec![
        ChatMessage::system(NLQ_REWRITE_SYSTEM),
        ChatMessage::user(&user),
    ])
}
