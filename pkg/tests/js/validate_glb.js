// usage: node validate_glb.js file.glb  -> prints the validator's issue summary as JSON
const fs = require("fs");
const validator = require("gltf-validator");

const data = new Uint8Array(fs.readFileSync(process.argv[2]));
validator
  .validateBytes(data, { maxIssues: 100 })
  .then((report) => {
    process.stdout.write(JSON.stringify({
      numErrors: report.issues.numErrors,
      numWarnings: report.issues.numWarnings,
      messages: report.issues.messages.map((m) => `${m.code} ${m.pointer || ""} ${m.message}`),
    }));
  })
  .catch((err) => {
    process.stderr.write(String(err));
    process.exit(3);
  });
