//! LabelImg / Pascal VOC style per-scene XML annotations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use roxmltree::{Document, Node};

use super::{make_box, parse_coordinate, parse_label, AnnotatedScene};
use crate::error::{Error, Result};

/// Parse one VOC-style annotation document. The image path is resolved
/// against the directory containing the XML file.
pub fn parse_annotations_xml(file: &Path) -> Result<AnnotatedScene> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    parse_xml_str(&text, file)
}

/// Parse every `*.xml` file in `dir`, in lexicographic filename order.
pub fn parse_xml_dir(dir: &Path) -> Result<Vec<AnnotatedScene>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
        })
        .collect();
    files.sort();
    files.iter().map(|f| parse_annotations_xml(f)).collect()
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn required<'a>(node: Node<'a, '_>, name: &str, path: &Path) -> Result<&'a str> {
    child_text(node, name)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::malformed(path, format!("missing <{name}>")))
}

fn parse_xml_str(text: &str, path: &Path) -> Result<AnnotatedScene> {
    let doc = Document::parse(text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "annotation" {
        return Err(Error::malformed(path, "root element is not <annotation>"));
    }

    let filename = required(root, "filename", path)?;
    let size = child(root, "size").ok_or_else(|| Error::malformed(path, "missing <size>"))?;
    let width = parse_coordinate(required(size, "width", path)?, path, "width")?;
    let height = parse_coordinate(required(size, "height", path)?, path, "height")?;
    if width <= 0 || height <= 0 {
        return Err(Error::malformed(path, "image size must be positive"));
    }

    let mut boxes = Vec::new();
    for object in root
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "object")
    {
        let label = parse_label(required(object, "name", path)?, path)?;
        let bndbox = child(object, "bndbox").ok_or_else(|| Error::malformed(path, "missing <bndbox>"))?;
        let mut coords = [0i64; 4];
        for (slot, field) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            *slot = parse_coordinate(required(bndbox, field, path)?, path, field)?;
        }
        boxes.push(make_box(label, coords, path)?);
    }

    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(AnnotatedScene {
        image_path: base.join(filename),
        width: width as u32,
        height: height as u32,
        boxes,
    })
}

/// Write `scene` as a VOC-style document next to its image.
pub fn write_annotation_xml(scene: &AnnotatedScene, file: &Path) -> Result<()> {
    let filename = scene
        .image_path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| Error::InvalidArgument("scene image path has no file name".into()))?;
    let mut out = String::new();
    out.push_str("<annotation>\n");
    let _ = writeln!(out, "  <filename>{}</filename>", escape(filename));
    out.push_str("  <size>\n");
    let _ = writeln!(out, "    <width>{}</width>", scene.width);
    let _ = writeln!(out, "    <height>{}</height>", scene.height);
    out.push_str("    <depth>3</depth>\n  </size>\n");
    for b in &scene.boxes {
        out.push_str("  <object>\n");
        let _ = writeln!(out, "    <name>{}</name>", b.label);
        out.push_str("    <bndbox>\n");
        let _ = writeln!(out, "      <xmin>{}</xmin>", b.xmin);
        let _ = writeln!(out, "      <ymin>{}</ymin>", b.ymin);
        let _ = writeln!(out, "      <xmax>{}</xmax>", b.xmax);
        let _ = writeln!(out, "      <ymax>{}</ymax>", b.ymax);
        out.push_str("    </bndbox>\n  </object>\n");
    }
    out.push_str("</annotation>\n");
    fs::write(file, out).map_err(|e| Error::io(file, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
