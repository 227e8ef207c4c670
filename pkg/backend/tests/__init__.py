"""Tests package for the FAVOR# backend"""
