import { ServiceClient } from './api.js';
import { AnnotationSession } from './session.js';
import { LabelUi } from './ui.js';

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

const baseUrl = param('service', 'http://127.0.0.1:8000');
const annotator = param('annotator', 'anonymous');
const filters = {
  camera: param('camera', '') || undefined,
  needsReview: param('needs_review', '') === 'true' || undefined,
};

const client = new ServiceClient(baseUrl);
const session = new AnnotationSession(client, annotator, filters);
const root = document.getElementById('app');
if (root === null) throw new Error('missing #app container');

new LabelUi(root, client, session).start();
