use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use quick_xml::Reader;

use super::images::IMAGE_EXTENSIONS;
use super::{CorpusError, DatasetSplit, Result, SplitName, UserRecord};
use crate::labels::GenderLabel;

/// Directory holding `truth.txt`, `text/` and `photo/` for one language.
///
/// Accepts both `<root>/<split>/<lang>` (one root for the whole corpus) and
/// `<root>/<lang>` (one root per split, as PAN distributes it).
pub fn resolve_language_dir(root: &Path, language: &str, split: SplitName) -> PathBuf {
    let nested = root.join(split.as_str()).join(language);
    if nested.is_dir() {
        nested
    } else {
        root.join(language)
    }
}

fn truth_file(lang_dir: &Path, language: &str) -> Result<PathBuf> {
    let candidates = [lang_dir.join("truth.txt"), lang_dir.join(format!("{language}.txt"))];
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| CorpusError::MissingTruthFile(lang_dir.to_path_buf()))
}

/// Parse `user_id:::label[:::extra...]` lines.
fn parse_truth(contents: &str) -> Result<Vec<(String, GenderLabel)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in contents.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(":::");
        let user_id = fields.next().unwrap_or("").trim();
        let value = fields
            .next()
            .ok_or_else(|| CorpusError::Integrity(format!("truth line {} has no label", lineno + 1)))?
            .trim();
        if user_id.is_empty() {
            return Err(CorpusError::Integrity(format!("truth line {} has an empty user id", lineno + 1)));
        }
        let label = value.parse::<GenderLabel>().map_err(|_| CorpusError::UnknownLabel {
            user_id: user_id.to_string(),
            value: value.to_string(),
        })?;
        if !seen.insert(user_id.to_string()) {
            return Err(CorpusError::Integrity(format!("duplicate user id {user_id} in truth file")));
        }
        out.push((user_id.to_string(), label));
    }
    Ok(out)
}

/// Extract the text of every `<document>` element, in document order.
pub(crate) fn parse_documents(xml: &str) -> std::result::Result<Vec<String>, String> {
    let mut reader = Reader::from_str(xml);
    let mut docs = Vec::new();
    let mut current: Option<String> = None;
    loop {
        match reader.read_event().map_err(|e| e.to_string())? {
            Event::Start(e) if e.name().as_ref() == b"document" => current = Some(String::new()),
            Event::Empty(e) if e.name().as_ref() == b"document" => docs.push(String::new()),
            Event::End(e) if e.name().as_ref() == b"document" => {
                if let Some(text) = current.take() {
                    docs.push(text);
                }
            }
            Event::Text(t) => {
                if let Some(buf) = current.as_mut() {
                    buf.push_str(&t.unescape().map_err(|e| e.to_string())?);
                }
            }
            Event::CData(c) => {
                if let Some(buf) = current.as_mut() {
                    let raw = c.into_inner();
                    buf.push_str(std::str::from_utf8(&raw).map_err(|e| e.to_string())?);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if current.is_some() {
        return Err("unterminated <document> element".into());
    }
    Ok(docs)
}

fn list_user_images(photo_dir: &Path) -> Result<Vec<PathBuf>> {
    if !photo_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(photo_dir).map_err(|e| CorpusError::io(photo_dir, e))? {
        let path = entry.map_err(|e| CorpusError::io(photo_dir, e))?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if ok && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Load one split of a PAN-style corpus.
///
/// Users appear in truth-file order. A truth entry without a readable tweet
/// document, or with zero documents, is an integrity error.
pub fn load_pan_dataset(root: &Path, language: &str, split: SplitName) -> Result<DatasetSplit> {
    let lang_dir = resolve_language_dir(root, language, split);
    let truth_path = truth_file(&lang_dir, language)?;
    let truth = fs::read_to_string(&truth_path).map_err(|e| CorpusError::io(&truth_path, e))?;
    let entries = parse_truth(&truth)?;

    let mut users = Vec::with_capacity(entries.len());
    for (user_id, label) in entries {
        let doc_path = lang_dir.join("text").join(format!("{user_id}.xml"));
        if !doc_path.is_file() {
            return Err(CorpusError::Integrity(format!(
                "user {user_id} has no tweet document at {}",
                doc_path.display()
            )));
        }
        let xml = fs::read_to_string(&doc_path).map_err(|e| CorpusError::io(&doc_path, e))?;
        let tweets = parse_documents(&xml)
            .map_err(|e| CorpusError::Integrity(format!("unparseable document {}: {e}", doc_path.display())))?;
        if tweets.is_empty() {
            return Err(CorpusError::Integrity(format!("document {} holds no tweets", doc_path.display())));
        }
        let images = list_user_images(&lang_dir.join("photo").join(&user_id))?;
        users.push(UserRecord { user_id, label: Some(label), tweets, images });
    }
    Ok(DatasetSplit { name: split, users })
}

/// Fails if a user id appears in both splits.
pub fn check_disjoint(a: &DatasetSplit, b: &DatasetSplit) -> Result<()> {
    let ids: HashSet<&str> = a.users.iter().map(|u| u.user_id.as_str()).collect();
    if let Some(u) = b.users.iter().find(|u| ids.contains(u.user_id.as_str())) {
        return Err(CorpusError::Integrity(format!(
            "user {} appears in both {} and {}",
            u.user_id, a.name, b.name
        )));
    }
    Ok(())
}

fn cdata(text: &str) -> String {
    format!("<![CDATA[{}]]>", text.replace("]]>", "]]]]><![CDATA[>"))
}

/// Write truth file and tweet documents of a split under `<root>/<split>/<lang>`.
/// Image files are not copied; callers place them under `photo/<user_id>/`.
pub fn write_pan_split(root: &Path, language: &str, split: &DatasetSplit) -> Result<PathBuf> {
    let lang_dir = root.join(split.name.as_str()).join(language);
    let text_dir = lang_dir.join("text");
    fs::create_dir_all(&text_dir).map_err(|e| CorpusError::io(&text_dir, e))?;
    let mut truth = String::new();
    for u in &split.users {
        let label = u
            .label
            .ok_or_else(|| CorpusError::InvalidArgument(format!("user {} has no label", u.user_id)))?;
        truth.push_str(&format!("{}:::{}\n", u.user_id, label));
        let mut xml = String::from("<author lang=\"");
        xml.push_str(language);
        xml.push_str("\">\n\t<documents>\n");
        for t in &u.tweets {
            xml.push_str("\t\t<document>");
            xml.push_str(&cdata(t));
            xml.push_str("</document>\n");
        }
        xml.push_str("\t</documents>\n</author>\n");
        let path = text_dir.join(format!("{}.xml", u.user_id));
        fs::write(&path, xml).map_err(|e| CorpusError::io(&path, e))?;
    }
    let truth_path = lang_dir.join("truth.txt");
    fs::write(&truth_path, truth).map_err(|e| CorpusError::io(&truth_path, e))?;
    Ok(lang_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_tolerates_trailing_fields() {
        let t = parse_truth("abc:::female:::x:::y\n\ndef:::MALE\n").unwrap();
        assert_eq!(t, vec![("abc".into(), GenderLabel::Female), ("def".into(), GenderLabel::Male)]);
    }

    #[test]
    fn truth_rejects_unknown_label() {
        assert!(matches!(parse_truth("abc:::bot"), Err(CorpusError::UnknownLabel { .. })));
    }

    #[test]
    fn truth_rejects_duplicates() {
        assert!(matches!(parse_truth("a:::male\na:::female"), Err(CorpusError::Integrity(_))));
    }

    #[test]
    fn documents_parse_cdata_and_entities() {
        let xml = "<author><documents><document><![CDATA[hi <b> ]]></document>\
                   <document>a &amp; b</document><document/></documents></author>";
        let docs = parse_documents(xml).unwrap();
        assert_eq!(docs, vec!["hi <b> ".to_string(), "a & b".to_string(), String::new()]);
    }

    #[test]
    fn cdata_escape_roundtrips() {
        let xml = format!("<documents><document>{}</document></documents>", cdata("x]]>y"));
        assert_eq!(parse_documents(&xml).unwrap(), vec!["x]]>y".to_string()]);
    }

    #[test]
    fn malformed_document_is_rejected() {
        assert!(parse_documents("<documents><document>oops</documents>").is_err());
    }
}
