"""Tests for gendoc"""
