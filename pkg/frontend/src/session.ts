/**
 * Annotation session state machine.
 *
 * Keyboard keys 1..5 map to PERFECT/CLEAR/CLOUDY/OBSCURED/BAD; 0 skips.
 * The session never advances past a frame without a confirmed submission
 * (or explicit skip), ignores duplicate keypresses while a request is in
 * flight, retains a failed submission locally for retry, and can undo the
 * most recent submissions it made itself (bounded stack).
 */

import {
  ApiError,
  CLASS_NAMES,
  ClassName,
  FrameDescriptor,
  NextFilters,
  ServiceClient,
} from './api.js';

export const KEY_TO_CLASS: Record<number, ClassName> = {
  1: 'PERFECT',
  2: 'CLEAR',
  3: 'CLOUDY',
  4: 'OBSCURED',
  5: 'BAD',
};

export interface UndoEntry {
  cameraId: string;
  capturedAt: string;
  label: ClassName;
}

export interface SessionStats {
  counts: Record<ClassName, number>;
  submitted: number;
  undone: number;
  skipped: number;
}

export type KeyResult =
  | { kind: 'submitted'; label: ClassName; queueSize: number }
  | { kind: 'ignored'; reason: 'in-flight' | 'no-frame' | 'bad-key' }
  | { kind: 'failed'; message: string; retained: boolean };

export type LoadResult =
  | { kind: 'frame'; frame: FrameDescriptor; queueSize: number }
  | { kind: 'drained'; queueSize: number }
  | { kind: 'error'; message: string };

export type UndoResult =
  | { kind: 'undone'; entry: UndoEntry; queueSize: number }
  | { kind: 'nothing-to-undo' }
  | { kind: 'failed'; message: string };

interface PendingSubmission {
  frame: FrameDescriptor;
  label: ClassName;
}

function emptyCounts(): Record<ClassName, number> {
  const counts = {} as Record<ClassName, number>;
  for (const name of CLASS_NAMES) counts[name] = 0;
  return counts;
}

export class AnnotationSession {
  current: FrameDescriptor | null = null;
  queueSize = 0;
  drained = false;

  private counts = emptyCounts();
  private submitted = 0;
  private undone = 0;
  private skippedCount = 0;
  private undoStack: UndoEntry[] = [];
  private inFlight = false;
  private pending: PendingSubmission | null = null;

  constructor(
    private readonly client: ServiceClient,
    readonly annotator: string,
    private readonly filters: NextFilters = {},
    private readonly maxUndo = 20,
  ) {}

  stats(): SessionStats {
    return {
      counts: { ...this.counts },
      submitted: this.submitted,
      undone: this.undone,
      skipped: this.skippedCount,
    };
  }

  get busy(): boolean {
    return this.inFlight;
  }

  get pendingSubmission(): PendingSubmission | null {
    return this.pending;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Fetch and display the next unlabeled frame. */
  async loadNext(): Promise<LoadResult> {
    if (this.inFlight) return { kind: 'error', message: 'busy' };
    this.inFlight = true;
    try {
      const body = await this.client.nextFrame(this.annotator, this.filters);
      this.queueSize = body.queue_size;
      if (body.drained || body.frame === null) {
        this.current = null;
        this.drained = true;
        return { kind: 'drained', queueSize: body.queue_size };
      }
      this.current = body.frame;
      this.drained = false;
      return { kind: 'frame', frame: body.frame, queueSize: body.queue_size };
    } catch (err) {
      // current frame (if any) stays put; caller offers a retry
      return { kind: 'error', message: errorText(err) };
    } finally {
      this.inFlight = false;
    }
  }

  /** Label the current frame via its number key and auto-advance. */
  async keyLabel(key: number): Promise<KeyResult> {
    const label = KEY_TO_CLASS[key];
    if (label === undefined) return { kind: 'ignored', reason: 'bad-key' };
    if (this.inFlight) return { kind: 'ignored', reason: 'in-flight' };
    const frame = this.pending?.frame ?? this.current;
    if (frame === null || frame === undefined) {
      return { kind: 'ignored', reason: 'no-frame' };
    }
    return this.submit(frame, this.pending ? this.pending.label : label);
  }

  /** Re-send a submission that failed on the network. */
  async retryPending(): Promise<KeyResult> {
    if (this.pending === null) return { kind: 'ignored', reason: 'no-frame' };
    return this.submit(this.pending.frame, this.pending.label);
  }

  private async submit(frame: FrameDescriptor, label: ClassName): Promise<KeyResult> {
    this.inFlight = true;
    try {
      const body = await this.client.submitLabel(
        frame.camera_id,
        frame.captured_at,
        label,
        this.annotator,
      );
      this.pending = null;
      this.counts[label] += 1;
      this.submitted += 1;
      this.undoStack.push({
        cameraId: frame.camera_id,
        capturedAt: frame.captured_at,
        label,
      });
      if (this.undoStack.length > this.maxUndo) this.undoStack.shift();
      this.queueSize = body.queue_size;
      this.current = null;
      this.inFlight = false;
      await this.loadNext();
      return { kind: 'submitted', label, queueSize: body.queue_size };
    } catch (err) {
      this.inFlight = false;
      if (err instanceof ApiError) {
        // the service rejected it; do not retain a doomed submission
        return { kind: 'failed', message: err.message, retained: false };
      }
      this.pending = { frame, label };
      return { kind: 'failed', message: errorText(err), retained: true };
    }
  }

  /** Defer the current frame without labeling; it returns after its lease expires. */
  async skip(): Promise<LoadResult> {
    if (this.inFlight) return { kind: 'error', message: 'busy' };
    if (this.current !== null) this.skippedCount += 1;
    this.current = null;
    return this.loadNext();
  }

  /** Take back the most recent submission made in this session. */
  async undo(): Promise<UndoResult> {
    const entry = this.undoStack[this.undoStack.length - 1];
    if (entry === undefined) return { kind: 'nothing-to-undo' };
    if (this.inFlight) return { kind: 'failed', message: 'busy' };
    this.inFlight = true;
    try {
      const body = await this.client.undoLabel(entry.cameraId, entry.capturedAt, this.annotator);
      this.undoStack.pop();
      this.counts[entry.label] -= 1;
      this.undone += 1;
      this.queueSize = body.queue_size;
      this.drained = false;
      return { kind: 'undone', entry, queueSize: body.queue_size };
    } catch (err) {
      return { kind: 'failed', message: errorText(err) };
    } finally {
      this.inFlight = false;
    }
  }
}

function errorText(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
