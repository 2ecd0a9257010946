//! Newline-delimited prediction files and the pseudo ground-truth file.

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DetectionInstance, PoseEvalError, PoseInstance, PseudoGtSet};

fn read_lines<T: DeserializeOwned, R: BufRead>(
    input: R,
    validate: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, PoseEvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let item: T = serde_json::from_str(&line).map_err(|e| PoseEvalError::Json {
            line: n,
            msg: e.to_string(),
        })?;
        validate(&item).map_err(|msg| PoseEvalError::Invalid { line: n, msg })?;
        out.push(item);
    }
    Ok(out)
}

/// One [`DetectionInstance`] per line; blank lines are ignored.
pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<DetectionInstance>, PoseEvalError> {
    read_lines(input, DetectionInstance::validate)
}

/// One [`PoseInstance`] per line; blank lines are ignored.
pub fn read_poses<R: BufRead>(input: R) -> Result<Vec<PoseInstance>, PoseEvalError> {
    read_lines(input, PoseInstance::validate)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pseudo_gt<W: Write>(gt: &PseudoGtSet, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, gt)?;
    out.write_all(b"\n")
}

pub fn read_pseudo_gt<R: Read>(input: R) -> Result<PseudoGtSet, PoseEvalError> {
    let gt: PseudoGtSet = serde_json::from_reader(input).map_err(|e| PoseEvalError::BadGroundTruth(e.to_string()))?;
    for (image_id, instances) in &gt.images {
        for p in instances {
            if &p.image_id != image_id {
                return Err(PoseEvalError::BadGroundTruth(format!(
                    "instance {} filed under image {image_id:?} has image_id {:?}",
                    p.id, p.image_id
                )));
            }
            p.validate()
                .map_err(|m| PoseEvalError::BadGroundTruth(format!("{image_id}/{}: {m}", p.id)))?;
        }
    }
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_eval::KEYPOINT_COUNT;

    #[test]
    fn round_trip() {
        let p = PoseInstance {
            image_id: "v1/000010".into(),
            id: 3,
            bbox: [1.5, 2.25, 30.0, 90.125],
            score: 0.123456789,
            keypoints: [[0.1, 0.2, 0.3]; KEYPOINT_COUNT],
        };
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&p), &mut buf).unwrap();
        assert_eq!(read_poses(&buf[..]).unwrap(), vec![p.clone()]);

        let gt = PseudoGtSet::from_instances(vec![p]);
        let mut buf = Vec::new();
        write_pseudo_gt(&gt, &mut buf).unwrap();
        assert_eq!(read_pseudo_gt(&buf[..]).unwrap(), gt);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = r#"{"image_id":"a","id":0,"bbox":[0,0,1,1],"score":0.5}"#;
        let bad = r#"{"image_id":"a","id":1,"bbox":[0,0,0,1],"score":0.5}"#;
        let text = format!("{good}\n\n{bad}\n");
        match read_detections(text.as_bytes()) {
            Err(PoseEvalError::Invalid { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_detections("{".as_bytes()) {
            Err(PoseEvalError::Json { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
