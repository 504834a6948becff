/**
 * DOM shell around the annotation session: one frame at a time, keyboard
 * first (1..5 label, 0 skip, z undo), QC banner for auto-flagged frames,
 * completion screen with session stats.
 */

import { CLASS_NAMES, FrameDescriptor, ServiceClient } from './api.js';
import { AnnotationSession, KEY_TO_CLASS } from './session.js';

const CLASS_KEYS = [1, 2, 3, 4, 5] as const;

export class LabelUi {
  private root: HTMLElement;

  constructor(
    root: HTMLElement,
    private readonly client: ServiceClient,
    private readonly session: AnnotationSession,
  ) {
    this.root = root;
    this.onKeyDown = this.onKeyDown.bind(this);
  }

  async start(): Promise<void> {
    document.addEventListener('keydown', this.onKeyDown);
    this.renderLoading();
    const result = await this.session.loadNext();
    this.renderFromLoad(result);
  }

  stop(): void {
    document.removeEventListener('keydown', this.onKeyDown);
  }

  private async onKeyDown(event: KeyboardEvent): Promise<void> {
    if (event.repeat) return;
    const key = Number(event.key);
    if (Number.isInteger(key) && key >= 1 && key <= 5) {
      await this.handleLabel(key);
    } else if (event.key === '0') {
      this.renderFromLoad(await this.session.skip());
    } else if (event.key === 'z') {
      await this.handleUndo();
    }
  }

  private async handleLabel(key: number): Promise<void> {
    const result = await this.session.keyLabel(key);
    if (result.kind === 'ignored') return; // in-flight guard or no frame
    if (result.kind === 'failed') {
      this.renderError(
        result.retained
          ? `Submission failed (${result.message}); it is retained — press any class key to retry.`
          : `Submission rejected: ${result.message}`,
      );
      return;
    }
    this.render();
  }

  private async handleUndo(): Promise<void> {
    const result = await this.session.undo();
    if (result.kind === 'failed') {
      this.renderError(`Undo failed: ${result.message}`);
      return;
    }
    this.render();
  }

  private renderFromLoad(result: Awaited<ReturnType<AnnotationSession['loadNext']>>): void {
    if (result.kind === 'error') {
      this.renderError(`Could not reach the service (${result.message}).`);
      return;
    }
    this.render();
  }

  render(): void {
    if (this.session.current === null) {
      if (this.session.drained) {
        this.renderCompletion();
      } else {
        this.renderLoading();
      }
      return;
    }
    this.renderFrame(this.session.current);
  }

  private renderFrame(frame: FrameDescriptor): void {
    const banner = frame.qc.needs_review
      ? `<div class="banner amber">auto-flagged ${frame.qc.verdict ?? '?'} ` +
        `${frame.qc.grayness !== null ? frame.qc.grayness.toFixed(2) : ''}</div>`
      : '';
    const buttons = CLASS_KEYS.map(
      (k) => `<button data-key="${k}">${k} ${KEY_TO_CLASS[k]}</button>`,
    ).join(' ');
    this.root.innerHTML = `
      ${banner}
      <div class="meta">
        <span class="camera">${escapeHtml(frame.camera_id)}</span>
        <span class="timestamp">${escapeHtml(frame.captured_at)}</span>
        <span class="queue">${this.session.queueSize} frames left</span>
      </div>
      <img class="frame" src="${this.client.imageUrl(frame)}" alt="webcam frame" />
      <div class="controls">${buttons}
        <button data-key="0">0 skip</button>
        <button data-key="z">z undo</button>
      </div>
      ${this.statsHtml()}
    `;
    this.root.querySelectorAll('button[data-key]').forEach((button) => {
      button.addEventListener('click', () => {
        const key = button.getAttribute('data-key')!;
        document.dispatchEvent(new KeyboardEvent('keydown', { key }));
      });
    });
  }

  private renderCompletion(): void {
    this.root.innerHTML = `
      <div class="done">
        <h2>Queue drained 🎉</h2>
        ${this.statsHtml()}
      </div>
    `;
  }

  private renderLoading(): void {
    this.root.innerHTML = '<div class="loading">loading next frame…</div>';
  }

  private renderError(message: string): void {
    this.root.innerHTML = `
      <div class="banner red">${escapeHtml(message)}</div>
      <button id="retry">retry</button>
      ${this.statsHtml()}
    `;
    this.root.querySelector('#retry')?.addEventListener('click', async () => {
      const result = this.session.pendingSubmission
        ? await this.session.retryPending()
        : await this.session.loadNext();
      if (result.kind === 'error' || result.kind === 'failed') {
        this.renderError('Still unreachable; will keep your work.');
      } else {
        this.render();
      }
    });
  }

  private statsHtml(): string {
    const stats = this.session.stats();
    const parts = CLASS_NAMES.map((name) => `${name}: ${stats.counts[name]}`).join(' · ');
    return `<div class="stats">${parts} · undone: ${stats.undone} · skipped: ${stats.skipped}</div>`;
  }
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}
